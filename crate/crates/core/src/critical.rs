// SPDX-License-Identifier: MIT OR Apache-2.0

//! Critical values: closed forms where they exist, Monte Carlo for the
//! weighted bridge and Rényi limits, and the data-driven `F_{N,L}` method for
//! the heteroskedasticity-robust weighted sup.
//!
//! The simulators sample the exact Brownian-bridge extremum between grid
//! points, and the grids are refined geometrically towards the endpoints
//! where the weights blow up.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::{a_norm, b_norm, check_renyi_kappa, weight_at};
use crate::error::{Error, Result};
use crate::hetero::HeteroKernel;
use crate::rng::{self, StreamRng};
use crate::weights::{integrability_check, TrimSpec, WeightKind, WeightSpec};

pub const DEFAULT_REPS: usize = 20_000;
pub const DEFAULT_GRID: usize = 2_000;
pub const DEFAULT_L: usize = 200;
/// Geometric refinement density (points per decade) near singular endpoints.
pub const POINTS_PER_DECADE: usize = 96;

const TAG_BRIDGE: u64 = 0xB81D;
const TAG_RENYI: u64 = 0x8E41;
const TAG_FNL: u64 = 0xF41;
const TAG_DE: u64 = 0xDE;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(())
}

fn check_sim(reps: usize, grid_points: usize) -> Result<()> {
    if reps < 100 {
        return Err(Error::InvalidParameter(format!(
            "need reps >= 100, got {reps}"
        )));
    }
    if grid_points < 200 {
        return Err(Error::InvalidParameter(format!(
            "need grid_points >= 200, got {grid_points}"
        )));
    }
    Ok(())
}

/// `inf { x : F(x) >= p }` for the empirical distribution of `sorted`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "empty sample");
    let n = sorted.len();
    let rank = ((n as f64 * p) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

fn sort_samples(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Gumbel-type quantile `c = -ln(-(1/2) ln(1 - alpha))`.
pub fn de_asymptotic_cv(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(-(-0.5 * (1.0 - alpha).ln()).ln())
}

/// CDF of `sup_{[0,1]} |B|` for a standard Brownian bridge.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        let pi2 = std::f64::consts::PI.powi(2);
        let mut s = 0.0;
        for k in 1..=50 {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * pi2 / (8.0 * x * x)).exp();
            s += term;
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * std::f64::consts::PI).sqrt() / x * s
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        1.0 - 2.0 * s
    }
}

/// CDF of `sup_{[0,1]} |W|` for a standard Wiener process.
pub fn sup_abs_wiener_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let mut s = 0.0;
    for k in 0..200 {
        let j = (2 * k + 1) as f64;
        let term = (-pi * pi * j * j / (8.0 * x * x)).exp() / j;
        s += if k % 2 == 0 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (4.0 / pi * s).clamp(0.0, 1.0)
}

/// Solves `F(x) = p` for nondecreasing `F` by bisection on `[lo, hi]`.
fn invert(f: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn kolmogorov_quantile(p: f64) -> Result<f64> {
    check_alpha(p)?;
    Ok(invert(kolmogorov_cdf, p, 1e-3, 10.0))
}

/// Upper-`alpha` point of `max(g1^{1/2} a1, g2^{1/2} a2)` at `kappa = 1`, where
/// `a(1) = sup_{[0,1]} |W|` in law.
pub fn renyi_kappa_one_cv(alpha: f64, gammas: (f64, f64)) -> Result<f64> {
    check_alpha(alpha)?;
    let (g1, g2) = (gammas.0.sqrt(), gammas.1.sqrt());
    let f = |c: f64| sup_abs_wiener_cdf(c / g1) * sup_abs_wiener_cdf(c / g2);
    Ok(invert(f, 1.0 - alpha, 1e-3, 20.0))
}

/// Closed-form critical values where the limit law is known.
pub fn analytic_cv(family: &CvFamily, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    match family {
        CvFamily::WeightedSup(w) if w.kappa_value() == Some(0.0) => {
            kolmogorov_quantile(1.0 - alpha)
        }
        CvFamily::DarlingErdos {
            finite_sample: false,
            ..
        } => de_asymptotic_cv(alpha),
        CvFamily::Renyi { kappa, trim } if *kappa == 1.0 => {
            renyi_kappa_one_cv(alpha, trim.gammas())
        }
        other => Err(Error::IncompatibleConfig(format!(
            "no closed-form critical value for {}; use a simulated source",
            other.key()
        ))),
    }
}

/// Sorted union of the uniform grid `j/uniform` on `[0, upper]` and geometric
/// points `10^{-j/ppd}` down to `10^{-decades}` where those are finer.
pub(crate) fn refined_grid(uniform: usize, decades: usize, upper: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=uniform)
        .map(|j| j as f64 / uniform as f64)
        .filter(|t| *t <= upper)
        .collect();
    let ratio = 10f64.powf(-1.0 / POINTS_PER_DECADE as f64);
    for j in 1..=decades * POINTS_PER_DECADE {
        let s = 10f64.powf(-(j as f64) / POINTS_PER_DECADE as f64);
        if s * (1.0 - ratio) < 1.0 / uniform as f64 {
            pts.push(s);
        }
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    pts
}

fn decades_for(excess: f64) -> usize {
    // contributions near the endpoint decay like t^{excess}
    if excess <= 0.0 {
        return 60;
    }
    ((4.0 / excess).ceil() as usize).clamp(4, 60)
}

/// Extremum of a Brownian bridge of duration `h` from `a` to `b`, on the side
/// that dominates in absolute value.
#[inline]
fn bridge_abs_extremum(a: f64, b: f64, h: f64, rng: &mut StreamRng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let d = b - a;
    let r = (d * d - 2.0 * h * u.ln()).sqrt();
    if a + b >= 0.0 {
        0.5 * (a + b + r)
    } else {
        -0.5 * (a + b - r)
    }
}

/// Interval factors from point weights: `1 / sqrt(w_j w_{j+1})`, or `None`
/// where a weight vanishes.
fn interval_factors(w: &[f64], invert: bool) -> Vec<Option<f64>> {
    w.windows(2)
        .map(|p| {
            let ok = p.iter().all(|v| *v > 0.0 && v.is_finite());
            let g = (p[0] * p[1]).sqrt();
            ok.then(|| if invert { 1.0 / g } else { g })
        })
        .collect()
}

/// Simulation grid. Bridges are built from two halves on `[0, 1/2]`, one
/// running forward from `t = 0` and one backward from `t = 1`, joined at a
/// common midpoint value, so both endpoints get the same fine resolution.
struct PathGrid {
    u: Vec<f64>,
    sqrt_du: Vec<f64>,
    left: Vec<Option<f64>>,
    /// Factors for the backward half (`t = 1 - u`); `None` for Wiener paths.
    right: Option<Vec<Option<f64>>>,
}

impl PathGrid {
    fn bridge(weight: &WeightSpec, grid_points: usize) -> Self {
        let decades = match weight.kind {
            WeightKind::KappaPower(k) => decades_for(0.5 - k),
            WeightKind::Custom(_) => 30,
        };
        let u = refined_grid(grid_points + grid_points % 2, decades, 0.5);
        let eval = |t: f64, one_minus: f64| match weight.kind {
            WeightKind::KappaPower(0.0) => 1.0,
            WeightKind::KappaPower(k) => (t * one_minus).powf(k),
            WeightKind::Custom(_) => weight.eval(t),
        };
        let wl: Vec<f64> = u.iter().map(|&s| eval(s, 1.0 - s)).collect();
        let wr: Vec<f64> = u.iter().map(|&s| eval(1.0 - s, s)).collect();
        Self::finish(
            u,
            interval_factors(&wl, true),
            Some(interval_factors(&wr, true)),
        )
    }

    fn renyi(kappa: f64, grid_points: usize) -> Self {
        let u = refined_grid(grid_points, decades_for(kappa - 0.5), 1.0);
        let f: Vec<f64> = u.iter().map(|&s| s.powf(kappa - 1.0)).collect();
        Self::finish(u, interval_factors(&f, false), None)
    }

    fn finish(u: Vec<f64>, left: Vec<Option<f64>>, right: Option<Vec<Option<f64>>>) -> Self {
        let sqrt_du = u.windows(2).map(|p| (p[1] - p[0]).sqrt()).collect();
        Self {
            u,
            sqrt_du,
            left,
            right,
        }
    }

    fn walk(&self, buf: &mut Vec<f64>, rng: &mut StreamRng) {
        buf.clear();
        buf.push(0.0);
        let mut w = 0.0;
        for s in &self.sqrt_du {
            let z: f64 = rng.sample(StandardNormal);
            w += s * z;
            buf.push(w);
        }
    }

    /// Pins a Wiener path on `[0, T]` to end at `m`.
    fn pin(&self, buf: &mut [f64], m: f64) {
        let span = *self.u.last().expect("non-empty grid");
        let end = *buf.last().expect("non-empty path");
        for (v, t) in buf.iter_mut().zip(&self.u) {
            *v -= t / span * (end - m);
        }
        let last = buf.len() - 1;
        buf[last] = m;
    }

    fn interval_sup(&self, path: &[f64], factors: &[Option<f64>], rng: &mut StreamRng) -> f64 {
        let mut best = 0.0f64;
        for (j, f) in factors.iter().enumerate() {
            if let Some(f) = f {
                let h = self.sqrt_du[j] * self.sqrt_du[j];
                best = best.max(bridge_abs_extremum(path[j], path[j + 1], h, rng) * f);
            }
        }
        best
    }

    fn sup(&self, buf: &mut Vec<f64>, rng: &mut StreamRng) -> f64 {
        match &self.right {
            None => {
                self.walk(buf, rng);
                self.interval_sup(buf, &self.left, rng)
            }
            Some(right) => {
                // B(1/2) ~ N(0, 1/4)
                let z: f64 = rng.sample(StandardNormal);
                let m = 0.5 * z;
                self.walk(buf, rng);
                self.pin(buf, m);
                let a = self.interval_sup(buf, &self.left, rng);
                self.walk(buf, rng);
                self.pin(buf, m);
                let b = self.interval_sup(buf, right, rng);
                a.max(b)
            }
        }
    }
}

fn simulate_sups(grid: &PathGrid, reps: usize, seed: u64, tag: u64, key: u64) -> Vec<f64> {
    (0..reps)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(grid.u.len()),
            |buf, r| {
                let mut rng = rng::stream(seed, &[tag, key, r as u64]);
                grid.sup(buf, &mut rng)
            },
        )
        .collect()
}

fn weight_key(weight: &WeightSpec) -> u64 {
    match &weight.kind {
        WeightKind::KappaPower(k) => rng::tag(*k),
        WeightKind::Custom(c) => {
            rng::derive_seed(0, &c.name().bytes().map(u64::from).collect::<Vec<_>>())
        }
    }
}

fn check_bridge_weight(weight: &WeightSpec) -> Result<()> {
    weight.validate()?;
    let ok = match weight.kind {
        WeightKind::KappaPower(k) => k < 0.5,
        WeightKind::Custom(_) => [1.0, 2.0, 4.0, 8.0]
            .iter()
            .any(|&c| integrability_check(weight, c)),
    };
    if !ok {
        return Err(Error::InvalidParameter(format!(
            "weight {} fails the integral test; the weighted bridge sup is infinite",
            weight.label()
        )));
    }
    Ok(())
}

/// Sorted draws of `sup_{0<t<1} |B(t)| / w(t)`.
pub fn simulate_bridge_sups(
    weight: &WeightSpec,
    reps: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_sim(reps, grid_points)?;
    check_bridge_weight(weight)?;
    let grid = PathGrid::bridge(weight, grid_points);
    Ok(sort_samples(simulate_sups(
        &grid,
        reps,
        seed,
        TAG_BRIDGE,
        weight_key(weight),
    )))
}

/// Upper-`alpha` point of `sup_{0<t<1} |B(t)| / w(t)`.
pub fn simulate_bridge_cv(
    weight: &WeightSpec,
    alpha: f64,
    reps: usize,
    grid_points: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let s = simulate_bridge_sups(weight, reps, grid_points, seed)?;
    Ok(empirical_quantile(&s, 1.0 - alpha))
}

/// Unsorted draws of `a(kappa) = sup_{t>=1} |W(t)|/t^kappa`, simulated as
/// `sup_{0<s<=1} s^{kappa-1} |W(s)|`.
pub fn simulate_renyi_sups(
    kappa: f64,
    reps: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_renyi_kappa(kappa)?;
    check_sim(reps, grid_points)?;
    let grid = PathGrid::renyi(kappa, grid_points);
    Ok(simulate_sups(&grid, reps, seed, TAG_RENYI, rng::tag(kappa)))
}

/// Critical value of `max(g1^{kappa-1/2} a1, g2^{kappa-1/2} a2)` from draws of `a(kappa)`.
///
/// With equal gammas this is the `sqrt(1-alpha)` quantile of a single copy;
/// otherwise consecutive draws are paired.
pub fn renyi_cv_from_samples(
    samples: &[f64],
    kappa: f64,
    gammas: (f64, f64),
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    if gammas.0 == gammas.1 {
        let scale = gammas.0.powf(kappa - 0.5);
        let sorted = sort_samples(samples.iter().map(|a| a * scale).collect());
        return Ok(empirical_quantile(&sorted, (1.0 - alpha).sqrt()));
    }
    let (s1, s2) = (gammas.0.powf(kappa - 0.5), gammas.1.powf(kappa - 0.5));
    let maxima = samples
        .chunks_exact(2)
        .map(|p| (s1 * p[0]).max(s2 * p[1]))
        .collect();
    Ok(empirical_quantile(&sort_samples(maxima), 1.0 - alpha))
}

/// Symmetric-trimming Rényi critical value: `P[a(kappa) <= c] = sqrt(1 - alpha)`.
pub fn simulate_renyi_cv(
    kappa: f64,
    alpha: f64,
    reps: usize,
    grid_points: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let s = simulate_renyi_sups(kappa, reps, grid_points, seed)?;
    renyi_cv_from_samples(&s, kappa, (1.0, 1.0), alpha)
}

/// Sorted draws of the Darling-Erdős statistic for a Gaussian random-walk
/// bridge with `n` steps.
pub fn de_finite_sample_stats(n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 20 {
        return Err(Error::SeriesTooShort { needed: 20, got: n });
    }
    if reps < 100 {
        return Err(Error::InvalidParameter(format!(
            "need reps >= 100, got {reps}"
        )));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let (a, b) = (a_norm(ln_n), b_norm(ln_n));
    let draws = (0..reps)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n + 1),
            |buf: &mut Vec<f64>, r| {
                let mut rng = rng::stream(seed, &[TAG_DE, n as u64, r as u64]);
                buf.clear();
                buf.push(0.0);
                let mut s = 0.0;
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    s += z;
                    buf.push(s);
                }
                let mut m = 0.0f64;
                for (j, &sj) in buf.iter().enumerate().take(n).skip(1) {
                    let t = j as f64 / nf;
                    let bj = (sj - t * s) / nf.sqrt();
                    m = m.max(bj.abs() / (t * (1.0 - t)).sqrt());
                }
                a * m - b
            },
        )
        .collect();
    Ok(sort_samples(draws))
}

/// Finite-sample Darling-Erdős critical value at sample size `n`.
pub fn de_finite_sample_cv(n: usize, alpha: f64, reps: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(empirical_quantile(
        &de_finite_sample_stats(n, reps, seed)?,
        1.0 - alpha,
    ))
}

/// `F_{N,L}`: the empirical law of `sup |Theta_i(t)| / w(t)` over `L` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnlDistribution {
    /// Sorted sups, one per simulated path.
    pub sups: Vec<f64>,
}

impl FnlDistribution {
    pub fn l(&self) -> usize {
        self.sups.len()
    }

    /// `F_{N,L}(x) = L^{-1} #{ i : sup_i <= x }`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sups.partition_point(|s| *s <= x) as f64 / self.sups.len() as f64
    }

    /// `c_{N,L}(alpha) = inf { x : F_{N,L}(x) >= 1 - alpha }`.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(empirical_quantile(&self.sups, 1.0 - alpha))
    }
}

/// Simulates `Theta_i(t) = c2(t) W_i(b(t)) - c1(t) (W_i(b(1)) - W_i(b(t)))` on
/// the grid for `L` independent Wiener paths.
pub fn hetero_fnl_distribution(
    kernel: &HeteroKernel,
    weight: &WeightSpec,
    l: usize,
    seed: u64,
) -> Result<FnlDistribution> {
    if l < 100 {
        return Err(Error::InvalidParameter(format!("need L >= 100, got {l}")));
    }
    weight.validate()?;
    if !(kernel.b_total() > 0.0) {
        return Err(Error::DegenerateSeries(
            "score variance b(1) is zero".into(),
        ));
    }
    let n = kernel.n();
    let sd: Vec<f64> = kernel.b_increments().iter().map(|v| v.sqrt()).collect();
    let inv_w: Vec<f64> = (2..=n - 2).map(|k| 1.0 / weight_at(weight, k, n)).collect();
    let key = rng::derive_seed(
        kernel_fingerprint(kernel),
        &[rng::tag(weight_key(weight) as f64)],
    );
    let sups = (0..l)
        .into_par_iter()
        .map_init(
            || vec![0.0; n + 1],
            |w: &mut Vec<f64>, i| {
                let mut rng = rng::stream(seed, &[TAG_FNL, key, i as u64]);
                // w[j] = W(b at summation index j)
                let mut acc = 0.0;
                w[0] = 0.0;
                w[1] = 0.0;
                for j in 2..=n {
                    let z: f64 = rng.sample(StandardNormal);
                    acc += sd[j] * z;
                    w[j] = acc;
                }
                let wb1 = w[n];
                let mut best = 0.0f64;
                for k in 2..=n - 2 {
                    let wbt = w[k];
                    let theta = kernel.c2_grid(k) * wbt - kernel.c1_grid(k) * (wb1 - wbt);
                    best = best.max(theta.abs() * inv_w[k - 2]);
                }
                best
            },
        )
        .collect();
    Ok(FnlDistribution {
        sups: sort_samples(sups),
    })
}

/// `c_{N,L}(alpha)` for the robust weighted sup.
pub fn hetero_fnl_cv(
    kernel: &HeteroKernel,
    weight: &WeightSpec,
    l: usize,
    alpha: f64,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    hetero_fnl_distribution(kernel, weight, l, seed)?.critical_value(alpha)
}

/// Stable hash of the kernel inputs, used to label data-driven critical values.
pub fn kernel_fingerprint(kernel: &HeteroKernel) -> u64 {
    let bits: Vec<u64> = kernel
        .b_increments()
        .iter()
        .map(|v| v.to_bits())
        .chain([kernel.c1_total().to_bits(), kernel.n() as u64])
        .collect();
    rng::derive_seed(0x6b65_726e, &bits)
}

/// Which limit law a critical value belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvFamily {
    WeightedSup(WeightSpec),
    DarlingErdos { finite_sample: bool, n: usize },
    Renyi { kappa: f64, trim: TrimSpec },
    HeteroFnl { weight: WeightSpec, l: usize },
}

impl CvFamily {
    /// Name used in cache files and messages.
    pub fn key(&self) -> String {
        match self {
            CvFamily::WeightedSup(w) => match &w.kind {
                WeightKind::KappaPower(_) => "bridge".into(),
                WeightKind::Custom(c) => format!("bridge:{}", c.name()),
            },
            CvFamily::DarlingErdos {
                finite_sample: false,
                ..
            } => "de_asymptotic".into(),
            CvFamily::DarlingErdos {
                finite_sample: true,
                n,
            } => format!("de_finite:n={n}"),
            CvFamily::Renyi { trim, .. } if trim.is_symmetric() => "renyi".into(),
            CvFamily::Renyi { trim, .. } => {
                let (g1, g2) = trim.gammas();
                format!("renyi:g1={g1}:g2={g2}")
            }
            CvFamily::HeteroFnl { weight, l } => format!("fnl:{}:L={l}", weight.label()),
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match self {
            CvFamily::WeightedSup(w) => w.kappa_value(),
            CvFamily::DarlingErdos { .. } => Some(0.5),
            CvFamily::Renyi { kappa, .. } => Some(*kappa),
            CvFamily::HeteroFnl { weight, .. } => weight.kappa_value(),
        }
    }
}

/// Where a critical value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Analytic,
    Simulated {
        reps: usize,
        grid: usize,
        seed: u64,
    },
    Fnl {
        fingerprint: u64,
        l: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRequest {
    pub family: CvFamily,
    pub alpha: f64,
    pub reps: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl CvRequest {
    pub fn new(family: CvFamily, alpha: f64) -> Self {
        Self {
            family,
            alpha,
            reps: DEFAULT_REPS,
            grid_points: DEFAULT_GRID,
            seed: 0x5EED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if matches!(
            self.family,
            CvFamily::DarlingErdos {
                finite_sample: false,
                ..
            }
        ) {
            return Ok(());
        }
        check_sim(self.reps, self.grid_points)
    }

    /// Simulates (or evaluates, for the asymptotic Darling-Erdős law) the
    /// requested value. `HeteroFnl` needs the kernel of the series under test.
    pub fn compute(&self, kernel: Option<&HeteroKernel>) -> Result<(f64, Provenance)> {
        self.validate()?;
        let sim = Provenance::Simulated {
            reps: self.reps,
            grid: self.grid_points,
            seed: self.seed,
        };
        match &self.family {
            CvFamily::WeightedSup(w) => Ok((
                simulate_bridge_cv(w, self.alpha, self.reps, self.grid_points, self.seed)?,
                sim,
            )),
            CvFamily::DarlingErdos {
                finite_sample: false,
                ..
            } => Ok((de_asymptotic_cv(self.alpha)?, Provenance::Analytic)),
            CvFamily::DarlingErdos {
                finite_sample: true,
                n,
            } => Ok((
                de_finite_sample_cv(*n, self.alpha, self.reps, self.seed)?,
                Provenance::Simulated {
                    reps: self.reps,
                    grid: *n,
                    seed: self.seed,
                },
            )),
            CvFamily::Renyi { kappa, trim } => {
                let samples = simulate_renyi_sups(*kappa, self.reps, self.grid_points, self.seed)?;
                Ok((
                    renyi_cv_from_samples(&samples, *kappa, trim.gammas(), self.alpha)?,
                    sim,
                ))
            }
            CvFamily::HeteroFnl { weight, l } => {
                let kernel = kernel.ok_or_else(|| {
                    Error::IncompatibleConfig("the F_{N,L} method needs the series' kernel".into())
                })?;
                Ok((
                    hetero_fnl_cv(kernel, weight, *l, self.alpha, self.seed)?,
                    Provenance::Fnl {
                        fingerprint: kernel_fingerprint(kernel),
                        l: *l,
                        seed: self.seed,
                    },
                ))
            }
        }
    }

    /// Cache row for this request; data-driven values are not cacheable.
    pub fn cache_key(&self) -> Option<CvKey> {
        if matches!(self.family, CvFamily::HeteroFnl { .. }) {
            return None;
        }
        let analytic = matches!(
            self.family,
            CvFamily::DarlingErdos {
                finite_sample: false,
                ..
            }
        );
        Some(CvKey {
            family: self.family.key(),
            kappa: self.family.kappa(),
            alpha: self.alpha,
            reps: if analytic { 0 } else { self.reps },
            grid: if analytic { 0 } else { self.grid_points },
            seed: if analytic { 0 } else { self.seed },
        })
    }
}

/// One row of a critical-value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvKey {
    pub family: String,
    pub kappa: Option<f64>,
    pub alpha: f64,
    pub reps: usize,
    pub grid: usize,
    pub seed: u64,
}

impl CvKey {
    fn id(&self) -> String {
        let kappa = self.kappa.map(|k| k.to_string()).unwrap_or_default();
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.family, kappa, self.alpha, self.reps, self.grid, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CvRow {
    family: String,
    kappa: Option<f64>,
    alpha: f64,
    reps: usize,
    grid: usize,
    seed: u64,
    value: f64,
}

pub const CACHE_VERSION: &str = "#version=1";

/// Critical values keyed by family, kappa, alpha and simulation settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CvTable {
    entries: BTreeMap<String, (CvKey, f64)>,
}

impl CvTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CvKey) -> Option<f64> {
        self.entries.get(&key.id()).map(|e| e.1)
    }

    pub fn insert(&mut self, key: CvKey, value: f64) {
        self.entries.insert(key.id(), (key, value));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CvKey, f64)> {
        self.entries.values().map(|(k, v)| (k, *v))
    }

    /// Looks the request up, computing and inserting it when absent.
    pub fn get_or_compute(&mut self, req: &CvRequest) -> Result<f64> {
        let key = req.cache_key().ok_or_else(|| {
            Error::IncompatibleConfig("data-driven critical values are not cached".into())
        })?;
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        let (v, _) = req.compute(None)?;
        self.insert(key, v);
        Ok(v)
    }

    /// Families whose values increase with alpha somewhere.
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (k, v) in self.iter() {
            let g = format!(
                "{}|{:?}|{}|{}|{}",
                k.family, k.kappa, k.reps, k.grid, k.seed
            );
            groups.entry(g).or_default().push((k.alpha, v));
        }
        let mut bad = Vec::new();
        for (g, mut rows) in groups {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if rows.windows(2).any(|w| w[1].1 > w[0].1) {
                bad.push(g);
            }
        }
        bad
    }

    pub fn to_delimited(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for (k, v) in self.iter() {
            wtr.serialize(CvRow {
                family: k.family.clone(),
                kappa: k.kappa,
                alpha: k.alpha,
                reps: k.reps,
                grid: k.grid,
                seed: k.seed,
                value: v,
            })?;
        }
        if self.is_empty() {
            wtr.write_record(["family", "kappa", "alpha", "reps", "grid", "seed", "value"])?;
        }
        let body = String::from_utf8(wtr.into_inner().map_err(|e| Error::Cache(e.to_string()))?)
            .map_err(|e| Error::Cache(e.to_string()))?;
        let mut out = String::new();
        writeln!(out, "{CACHE_VERSION}").expect("write to string");
        out.push_str(&body);
        Ok(out)
    }

    pub fn from_delimited(text: &str) -> Result<Self> {
        let mut lines = text.splitn(2, '\n');
        let first = lines.next().unwrap_or("").trim_end_matches('\r');
        if first != CACHE_VERSION {
            return Err(Error::Cache(format!(
                "unsupported cache header '{first}', expected '{CACHE_VERSION}'"
            )));
        }
        let rest = lines.next().unwrap_or("");
        let mut rdr = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
        let mut table = CvTable::new();
        for row in rdr.deserialize() {
            let row: CvRow = row.map_err(|e| Error::Cache(e.to_string()))?;
            table.insert(
                CvKey {
                    family: row.family,
                    kappa: row.kappa,
                    alpha: row.alpha,
                    reps: row.reps,
                    grid: row.grid,
                    seed: row.seed,
                },
                row.value,
            );
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        Self::from_delimited(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_delimited()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn de_formula() {
        assert!((de_asymptotic_cv(0.05).unwrap() - 3.663_342).abs() < 1e-6);
        assert!((de_asymptotic_cv(0.10).unwrap() - 2.943_515).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for j in 1..1000 {
            let v = de_asymptotic_cv(j as f64 / 1000.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(de_asymptotic_cv(1.0 - 1e-12).unwrap() < -2.5);
        assert!(de_asymptotic_cv(0.0).is_err());
    }

    #[test]
    fn empirical_quantile_is_order_statistic() {
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.95), 190.0);
        assert_eq!(empirical_quantile(&v, 0.9), 180.0);
        assert_eq!(empirical_quantile(&v, 0.951), 191.0);
        assert_eq!(empirical_quantile(&v, 1e-9), 1.0);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // the two series coincide; compare across the switch point
        let lo = kolmogorov_cdf(1.0 - 1e-12);
        let hi = kolmogorov_cdf(1.0);
        assert!((lo - hi).abs() < 1e-10);
        assert!((kolmogorov_quantile(0.95).unwrap() - 1.358_099).abs() < 1e-5);
    }

    #[test]
    fn grid_is_refined_at_ends() {
        let g = refined_grid(200, 4, 0.5);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 0.5);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g[1] < 1e-4 * 1.01);
        // spacing never exceeds the uniform step
        assert!(g.windows(2).all(|w| w[1] - w[0] <= 1.0 / 200.0 + 1e-15));
    }

    #[test]
    fn simulation_is_seeded() {
        let w = WeightSpec::kappa(0.25).unwrap();
        let a = simulate_bridge_sups(&w, 200, 200, 7).unwrap();
        let b = simulate_bridge_sups(&w, 200, 200, 7).unwrap();
        let c = simulate_bridge_sups(&w, 200, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(simulate_bridge_sups(&WeightSpec::kappa(0.5).unwrap(), 200, 200, 1).is_err());
        assert!(simulate_bridge_sups(&w, 99, 200, 1).is_err());
        assert!(simulate_bridge_sups(&w, 100, 199, 1).is_err());
    }

    #[test]
    fn asymmetric_renyi_pairs() {
        let s = vec![1.0, 2.0, 3.0, 4.0];
        let v = renyi_cv_from_samples(&s, 1.0, (1.0, 0.25), 0.5).unwrap();
        // maxima: max(1, 1), max(3, 2) = [1, 3]
        assert_eq!(v, 1.0);
    }

    #[test]
    fn analytic_sources() {
        let r = CvFamily::Renyi {
            kappa: 1.0,
            trim: TrimSpec::new(10, 10).unwrap(),
        };
        let c = analytic_cv(&r, 0.05).unwrap();
        assert!((sup_abs_wiener_cdf(c) - 0.95f64.sqrt()).abs() < 1e-10);
        let asym = CvFamily::Renyi {
            kappa: 1.0,
            trim: TrimSpec::new(10, 40).unwrap(),
        };
        assert!(analytic_cv(&asym, 0.05).unwrap() < c);
        let w = CvFamily::WeightedSup(WeightSpec::kappa(0.25).unwrap());
        assert!(matches!(
            analytic_cv(&w, 0.05),
            Err(Error::IncompatibleConfig(_))
        ));
    }

    #[test]
    fn cache_round_trip() {
        let mut t = CvTable::new();
        let req = CvRequest {
            family: CvFamily::WeightedSup(WeightSpec::kappa(0.1).unwrap()),
            alpha: 0.05,
            reps: 200,
            grid_points: 200,
            seed: 3,
        };
        let v = t.get_or_compute(&req).unwrap();
        let de = CvRequest::new(
            CvFamily::DarlingErdos {
                finite_sample: false,
                n: 0,
            },
            0.1,
        );
        t.get_or_compute(&de).unwrap();
        t.insert(
            CvKey {
                family: "bridge".into(),
                kappa: Some(0.1),
                alpha: 0.1,
                reps: 200,
                grid: 200,
                seed: 3,
            },
            0.1 + 0.2,
        );
        let text = t.to_delimited().unwrap();
        assert!(text.starts_with("#version=1\nfamily,kappa,alpha,reps,grid,seed,value\n"));
        let back = CvTable::from_delimited(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(&req.cache_key().unwrap()), Some(v));
        assert!(back.monotonicity_violations().is_empty());
        assert!(CvTable::from_delimited("#version=0\n").is_err());
        let empty = CvTable::new().to_delimited().unwrap();
        assert!(CvTable::from_delimited(&empty).unwrap().is_empty());
    }
}
