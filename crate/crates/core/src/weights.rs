// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight functions for the CUSUM sup-norm and trimming for Rényi statistics.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive weight `w: (0,1) -> (0, inf)`.
#[derive(Clone)]
pub struct CustomWeight {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl CustomWeight {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    /// `w(t) = (t(1-t) * max(1, ln ln(1/(t(1-t)))))^{1/2}`: just heavier than
    /// the standardising weight, yet with a finite integral test for `c > 1`.
    pub fn loglog() -> Self {
        Self::new("loglog", |t: f64| {
            let u = t * (1.0 - t);
            let ll = (1.0 / u).ln().ln();
            (u * ll.max(1.0)).sqrt()
        })
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "loglog" => Some(Self::loglog()),
            _ => None,
        }
    }
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomWeight({})", self.name)
    }
}

impl PartialEq for CustomWeight {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    /// `w(t) = (t(1-t))^kappa`.
    KappaPower(f64),
    Custom(CustomWeight),
}

/// Selects the weighting of the CUSUM process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "WeightRepr", try_from = "WeightRepr")]
pub struct WeightSpec {
    pub kind: WeightKind,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WeightRepr {
    KappaPower { kappa: f64 },
    Custom { name: String },
}

impl From<WeightSpec> for WeightRepr {
    fn from(w: WeightSpec) -> Self {
        match w.kind {
            WeightKind::KappaPower(kappa) => WeightRepr::KappaPower { kappa },
            WeightKind::Custom(c) => WeightRepr::Custom { name: c.name },
        }
    }
}

impl TryFrom<WeightRepr> for WeightSpec {
    type Error = Error;

    fn try_from(r: WeightRepr) -> Result<Self> {
        match r {
            WeightRepr::KappaPower { kappa } => WeightSpec::kappa(kappa),
            WeightRepr::Custom { name } => CustomWeight::by_name(&name)
                .map(WeightSpec::custom)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown custom weight '{name}'"))),
        }
    }
}

impl WeightSpec {
    pub fn kappa(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be >= 0, got {kappa}"
            )));
        }
        Ok(Self {
            kind: WeightKind::KappaPower(kappa),
        })
    }

    pub fn unweighted() -> Self {
        Self {
            kind: WeightKind::KappaPower(0.0),
        }
    }

    pub fn custom(w: CustomWeight) -> Self {
        Self {
            kind: WeightKind::Custom(w),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            WeightKind::KappaPower(k) => {
                if *k == 0.0 {
                    1.0
                } else {
                    (t * (1.0 - t)).powf(*k)
                }
            }
            WeightKind::Custom(c) => c.eval(t),
        }
    }

    pub fn kappa_value(&self) -> Option<f64> {
        match self.kind {
            WeightKind::KappaPower(k) => Some(k),
            WeightKind::Custom(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            WeightKind::KappaPower(k) => format!("kappa={k}"),
            WeightKind::Custom(c) => c.name().to_string(),
        }
    }

    /// Checks the admissibility conditions on a grid: positive on compact
    /// sub-intervals, nondecreasing near 0 and nonincreasing near 1.
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            WeightKind::KappaPower(k) => {
                if !(*k >= 0.0 && k.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "kappa must be >= 0, got {k}"
                    )));
                }
                Ok(())
            }
            WeightKind::Custom(c) => {
                const GRID: usize = 2000;
                for j in 1..GRID {
                    let t = j as f64 / GRID as f64;
                    let v = c.eval(t);
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "weight '{}' not positive at t = {t}",
                            c.name()
                        )));
                    }
                }
                // geometric probes towards each endpoint
                let probes: Vec<f64> = (0..=40)
                    .map(|j| 1e-2 * 10f64.powf(-j as f64 / 5.0))
                    .collect();
                for pair in probes.windows(2) {
                    let (outer, inner) = (pair[1], pair[0]);
                    if c.eval(outer) > c.eval(inner) * (1.0 + 1e-12) {
                        return Err(Error::InvalidParameter(format!(
                            "weight '{}' not nondecreasing near 0",
                            c.name()
                        )));
                    }
                    if c.eval(1.0 - outer) > c.eval(1.0 - inner) * (1.0 + 1e-12) {
                        return Err(Error::InvalidParameter(format!(
                            "weight '{}' not nonincreasing near 1",
                            c.name()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Trimming sequences `r1(N)`, `r2(N)` for Rényi statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimSpec {
    pub r1: usize,
    pub r2: usize,
}

impl TrimSpec {
    pub fn new(r1: usize, r2: usize) -> Result<Self> {
        if r1 == 0 || r2 == 0 {
            return Err(Error::InvalidParameter(
                "trimming values must be >= 1".into(),
            ));
        }
        Ok(Self { r1, r2 })
    }

    /// Symmetric `r1 = r2 = ceil((ln N)^2)`.
    pub fn default_for(n: usize) -> Self {
        let r = ((n as f64).ln().powi(2)).ceil().max(1.0) as usize;
        Self { r1: r, r2: r }
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.r1 == 0 || self.r2 == 0 || self.r1 + self.r2 >= n {
            return Err(Error::InvalidParameter(format!(
                "trimming ({}, {}) invalid for N = {n}",
                self.r1, self.r2
            )));
        }
        Ok(())
    }

    pub fn r_min(&self) -> usize {
        self.r1.min(self.r2)
    }

    /// Finite-sample `(gamma1, gamma2) = (r_N / r1, r_N / r2)`.
    pub fn gammas(&self) -> (f64, f64) {
        let r = self.r_min() as f64;
        (r / self.r1 as f64, r / self.r2 as f64)
    }

    pub fn is_symmetric(&self) -> bool {
        self.r1 == self.r2
    }
}

/// Whether `I(w, c) = int_0^1 exp(-c w(t)^2 / (t(1-t))) / (t(1-t)) dt` is finite.
///
/// Power weights are decided analytically. Custom weights are integrated on
/// `u = -ln t` (and its mirror at 1) over doubling ranges out to `t ~ 1e-304`;
/// the integral is declared finite when the contributions of successive
/// doublings are negligible or contract geometrically.
pub fn integrability_check(weight: &WeightSpec, c: f64) -> bool {
    if !(c > 0.0 && c.is_finite()) {
        log::warn!("integrability check needs c > 0");
        return false;
    }
    match &weight.kind {
        WeightKind::KappaPower(k) => *k < 0.5,
        WeightKind::Custom(w) => {
            let left = |u: f64| {
                let t = (-u).exp();
                let s = t * (1.0 - t);
                let v = w.eval(t);
                (-c * v * v / s).exp() / (1.0 - t)
            };
            let right = |u: f64| {
                let t = (-u).exp();
                let s = t * (1.0 - t);
                let v = w.eval(1.0 - t);
                (-c * v * v / s).exp() / (1.0 - t)
            };
            // 1 - t rounds to 1 below t ~ 1e-16, so the right tail stops at u = 32
            tail_converges(&left, 512.0) && tail_converges(&right, 32.0)
        }
    }
}

/// Composite Simpson rule with `2m` panels.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for j in 1..n {
        let x = a + j as f64 * h;
        s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

fn tail_converges(g: &dyn Fn(f64) -> f64, u_max: f64) -> bool {
    let mut edges = vec![std::f64::consts::LN_2];
    let mut u = 2.0;
    while u <= u_max {
        edges.push(u);
        u *= 2.0;
    }
    let pieces: Vec<f64> = edges
        .windows(2)
        .map(|e| simpson(g, e[0], e[1], 400))
        .collect();
    if pieces.iter().any(|p| !p.is_finite()) {
        log::warn!("integrability check inconclusive: non-finite quadrature");
        return false;
    }
    let total: f64 = pieces.iter().sum();
    let last = pieces[pieces.len() - 3..].to_vec();
    if last.iter().all(|p| *p <= 1e-12 * total.max(1e-300)) {
        return true;
    }
    last.windows(2).all(|w| w[1] < 0.95 * w[0]) && last[2] < 1e-2 * total
}
