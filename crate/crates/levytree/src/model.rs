//! Lifespan measures and every analytic quantity derived from them.
//!
//! A finite measure Λ on (0,∞) with total mass `b` drives both sides of the
//! toolkit: as the Lévy measure of the compensated compound Poisson process
//! `X` (drift −1, jumps at rate `b` with sizes Λ(·)/b, Laplace exponent
//! ψ(λ) = λ − ∫(1−e^{−λr}) Λ(dr)) and as the lifespan measure of the
//! splitting tree whose contour `X` is. The embedded generation process is a
//! Bienaymé-Galton-Watson chain with mixed-Poisson offspring
//! p_k = ∫ Λ(dz)/b · (bz)^k e^{−bz}/k!, whose mean is m = ∫ z Λ(dz).
//!
//! Only subcritical (m < 1) and critical (m = 1) measures are accepted: those
//! are exactly the regimes in which the process hits 0 almost surely and
//! height-conditioning is non-trivial.

use crate::error::{Error, Result};
use crate::mc::gamma_p;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardUniform};
use serde::{Deserialize, Serialize};

/// Tolerance inside which a computed m is classified as critical; the
/// quadrature/closed forms produce m only up to floating error.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Cap on generating-function iterations; subcritical survival probabilities
/// underflow long before this.
pub const PGF_ITERATION_CAP: usize = 100_000;

// ---------------------------------------------------------------------------
// Lifespan measure
// ---------------------------------------------------------------------------

/// Parametric family for the normalized lifetime law Λ(·)/b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LifespanKind {
    /// Exponential(θ): density θ e^{−θz}.
    Exponential { theta: f64 },
    /// Unit mass at z0.
    PointMass { z0: f64 },
    /// Uniform on (0, z_max).
    Uniform { z_max: f64 },
    /// Tabulated CDF: piecewise-linear through `(z, F)` points; repeated z
    /// values encode atoms. First F may be positive (atom at the first z).
    TableCdf { grid: Vec<(f64, f64)> },
}

/// A finite lifespan measure Λ = b · ν where ν is a probability law on (0,∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifespanMeasure {
    b: f64,
    kind: LifespanKind,
}

/// Internal decomposition of a `TableCdf` into uniform segments and atoms.
#[derive(Debug, Clone, Copy)]
enum TableSeg {
    Uniform { lo: f64, hi: f64, w: f64 },
    Atom { z: f64, w: f64 },
}

/// (1 − e^{−x})/x, accurate down to x = 0.
fn g1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// (1 − e^{−x}(1+x))/x², accurate down to x = 0 (series below 1e-2).
fn g2(x: f64) -> f64 {
    if x < 1e-2 {
        0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x * x * x * x / 144.0
    } else {
        (-(-x).exp_m1() - x * (-x).exp()) / (x * x)
    }
}

/// (e^{−x} − 1 + x)/x², accurate down to x = 0 (series below 1e-2).
fn g3(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x * x * x * x / 720.0
    } else {
        ((-x).exp_m1() + x) / (x * x)
    }
}

fn table_segments(grid: &[(f64, f64)]) -> Vec<TableSeg> {
    let mut segs = Vec::new();
    let (z0, f0) = grid[0];
    if f0 > 0.0 {
        segs.push(TableSeg::Atom { z: z0, w: f0 });
    }
    for win in grid.windows(2) {
        let (za, fa) = win[0];
        let (zb, fb) = win[1];
        let w = fb - fa;
        if w <= 0.0 {
            continue;
        }
        if zb > za {
            segs.push(TableSeg::Uniform { lo: za, hi: zb, w });
        } else {
            segs.push(TableSeg::Atom { z: za, w });
        }
    }
    segs
}

impl LifespanMeasure {
    /// Validates and constructs the measure. Rejects non-finite or
    /// non-positive rates and supercritical means.
    pub fn new(b: f64, kind: LifespanKind) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::InvalidModel(
                "infinite birth rate: every height is reached almost surely \
                 before absorption, so height conditioning is trivial and \
                 unsupported here"
                    .into(),
            ));
        }
        if b <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "birth rate b={b} must be positive"
            )));
        }
        match &kind {
            LifespanKind::Exponential { theta } => {
                if !(theta.is_finite() && *theta > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "theta={theta} must be positive"
                    )));
                }
            }
            LifespanKind::PointMass { z0 } => {
                if !(z0.is_finite() && *z0 > 0.0) {
                    return Err(Error::InvalidModel(format!("z0={z0} must be positive")));
                }
            }
            LifespanKind::Uniform { z_max } => {
                if !(z_max.is_finite() && *z_max > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "z_max={z_max} must be positive"
                    )));
                }
            }
            LifespanKind::TableCdf { grid } => {
                if grid.len() < 2 && grid.first().map(|p| p.1) != Some(1.0) {
                    return Err(Error::InvalidModel(
                        "table grid needs at least 2 points".into(),
                    ));
                }
                let mut prev_z = 0.0;
                let mut prev_f = 0.0;
                for &(z, f) in grid {
                    if !z.is_finite() || !f.is_finite() || z < 0.0 {
                        return Err(Error::InvalidModel(
                            "table entries must be finite, z >= 0".into(),
                        ));
                    }
                    if z < prev_z || f < prev_f - 1e-15 {
                        return Err(Error::InvalidModel(
                            "table grid must be non-decreasing".into(),
                        ));
                    }
                    prev_z = z;
                    prev_f = f;
                }
                let last = grid.last().unwrap();
                if (last.1 - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidModel(format!(
                        "table CDF must end at 1, ends at {}",
                        last.1
                    )));
                }
                if grid[0].1 > 0.0 && grid[0].0 == 0.0 {
                    return Err(Error::InvalidModel("table CDF puts an atom at z=0".into()));
                }
            }
        }
        let measure = Self { b, kind };
        let m = measure.m();
        if !(m > 0.0) {
            return Err(Error::InvalidModel(format!(
                "mean jump m={m} must be positive"
            )));
        }
        if m > 1.0 + CRITICAL_TOL {
            return Err(Error::InvalidModel(format!(
                "m={m} > 1: the process drifts to +infinity and never hits 0; \
                 only subcritical (m<1) and critical (m=1) measures are supported"
            )));
        }
        Ok(measure)
    }

    pub fn exponential(b: f64, theta: f64) -> Result<Self> {
        Self::new(b, LifespanKind::Exponential { theta })
    }

    pub fn point_mass(b: f64, z0: f64) -> Result<Self> {
        Self::new(b, LifespanKind::PointMass { z0 })
    }

    pub fn uniform(b: f64, z_max: f64) -> Result<Self> {
        Self::new(b, LifespanKind::Uniform { z_max })
    }

    pub fn table_cdf(b: f64, grid: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(b, LifespanKind::TableCdf { grid })
    }

    /// Total mass b = Λ(ℝ⁺), the birth rate.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn kind(&self) -> &LifespanKind {
        &self.kind
    }

    /// Mean of the normalized lifetime law, ∫ z ν(dz) = m/b.
    pub fn mean_lifetime(&self) -> f64 {
        match &self.kind {
            LifespanKind::Exponential { theta } => 1.0 / theta,
            LifespanKind::PointMass { z0 } => *z0,
            LifespanKind::Uniform { z_max } => z_max / 2.0,
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    TableSeg::Uniform { lo, hi, w } => w * (lo + hi) / 2.0,
                    TableSeg::Atom { z, w } => w * z,
                })
                .sum(),
        }
    }

    /// m = ∫ z Λ(dz), the offspring mean of the embedded BGW chain.
    pub fn m(&self) -> f64 {
        self.b * self.mean_lifetime()
    }

    /// Whether |m − 1| < [`CRITICAL_TOL`].
    pub fn is_critical(&self) -> bool {
        (self.m() - 1.0).abs() < CRITICAL_TOL
    }

    /// ∫ z² Λ(dz).
    pub fn second_moment(&self) -> f64 {
        let e2 = match &self.kind {
            LifespanKind::Exponential { theta } => 2.0 / (theta * theta),
            LifespanKind::PointMass { z0 } => z0 * z0,
            LifespanKind::Uniform { z_max } => z_max * z_max / 3.0,
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    TableSeg::Uniform { lo, hi, w } => w * (lo * lo + lo * hi + hi * hi) / 3.0,
                    TableSeg::Atom { z, w } => w * z * z,
                })
                .sum(),
        };
        self.b * e2
    }

    /// Laplace transform of the normalized lifetime law, E[e^{−λ Z}].
    pub fn laplace(&self, lambda: f64) -> f64 {
        match &self.kind {
            LifespanKind::Exponential { theta } => theta / (theta + lambda),
            LifespanKind::PointMass { z0 } => (-lambda * z0).exp(),
            LifespanKind::Uniform { z_max } => g1(lambda * z_max),
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    TableSeg::Uniform { lo, hi, w } => {
                        w * (-lambda * lo).exp() * g1(lambda * (hi - lo))
                    }
                    TableSeg::Atom { z, w } => w * (-lambda * z).exp(),
                })
                .sum(),
        }
    }

    /// 1 − L(λ), computed without the catastrophic cancellation that the
    /// plain difference suffers for small λ; this drives the survival
    /// recursion q ↦ 1 − f(1 − q) = (1 − L)(bq) deep into the tail where
    /// q underflows the naive form.
    fn one_minus_laplace(&self, lambda: f64) -> f64 {
        match &self.kind {
            LifespanKind::Exponential { theta } => lambda / (theta + lambda),
            LifespanKind::PointMass { z0 } => -(-lambda * z0).exp_m1(),
            // 1 − g1(x) = x·g3(x)
            LifespanKind::Uniform { z_max } => lambda * z_max * g3(lambda * z_max),
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    // 1 − e^{−λlo} g1(λΔ) = (1 − g1) + g1(1 − e^{−λlo})
                    TableSeg::Uniform { lo, hi, w } => {
                        let x = lambda * (hi - lo);
                        w * (x * g3(x) + g1(x) * -(-lambda * lo).exp_m1())
                    }
                    TableSeg::Atom { z, w } => w * -(-lambda * z).exp_m1(),
                })
                .sum(),
        }
    }

    /// E[e^{γ Z}] of the normalized lifetime law, when finite; `None` when
    /// the exponential moment diverges (γ ≥ θ for the exponential kind).
    pub fn exp_moment(&self, gamma: f64) -> Option<f64> {
        if gamma < 0.0 {
            return Some(self.laplace(-gamma));
        }
        match &self.kind {
            LifespanKind::Exponential { theta } => {
                (gamma < *theta).then(|| theta / (theta - gamma))
            }
            LifespanKind::PointMass { z0 } => Some((gamma * z0).exp()),
            LifespanKind::Uniform { z_max } => Some(if gamma == 0.0 {
                1.0
            } else {
                (gamma * z_max).exp_m1() / (gamma * z_max)
            }),
            LifespanKind::TableCdf { grid } => Some(
                table_segments(grid)
                    .iter()
                    .map(|s| match *s {
                        TableSeg::Uniform { lo, hi, w } => {
                            if gamma == 0.0 {
                                w
                            } else {
                                w * (gamma * lo).exp() * ((gamma * (hi - lo)).exp_m1())
                                    / (gamma * (hi - lo))
                            }
                        }
                        TableSeg::Atom { z, w } => w * (gamma * z).exp(),
                    })
                    .sum(),
            ),
        }
    }

    /// E[Z e^{−λ Z}] for the normalized lifetime law.
    fn laplace_weighted(&self, lambda: f64) -> f64 {
        match &self.kind {
            LifespanKind::Exponential { theta } => theta / ((theta + lambda) * (theta + lambda)),
            LifespanKind::PointMass { z0 } => z0 * (-lambda * z0).exp(),
            LifespanKind::Uniform { z_max } => z_max * g2(lambda * z_max),
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    // ∫_lo^hi z e^{−λz} dz / Δ = e^{−λ lo}(lo g1(λΔ) + Δ g2(λΔ))
                    TableSeg::Uniform { lo, hi, w } => {
                        let d = hi - lo;
                        w * (-lambda * lo).exp() * (lo * g1(lambda * d) + d * g2(lambda * d))
                    }
                    TableSeg::Atom { z, w } => w * z * (-lambda * z).exp(),
                })
                .sum(),
        }
    }

    /// Laplace exponent ψ(λ) = λ − ∫(1 − e^{−λr}) Λ(dr) = λ − b(1 − L(λ)).
    pub fn psi(&self, lambda: f64) -> Result<f64> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "psi requires lambda >= 0, got {lambda}"
            )));
        }
        Ok(lambda - self.b * (1.0 - self.laplace(lambda)))
    }

    /// ψ'(λ) = 1 − ∫ r e^{−λr} Λ(dr); ψ'(0) = 1 − m.
    pub fn psi_prime(&self, lambda: f64) -> Result<f64> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "psi' requires lambda >= 0, got {lambda}"
            )));
        }
        Ok(1.0 - self.b * self.laplace_weighted(lambda))
    }

    /// Draws a lifetime from ν = Λ(·)/b.
    pub fn sample_lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            LifespanKind::Exponential { theta } => {
                Exp::new(*theta).expect("validated theta").sample(rng)
            }
            LifespanKind::PointMass { z0 } => *z0,
            LifespanKind::Uniform { z_max } => rng.sample::<f64, _>(StandardUniform) * z_max,
            LifespanKind::TableCdf { grid } => {
                let u: f64 = rng.sample(StandardUniform);
                // linear interpolation of the inverse CDF
                let mut prev = grid[0];
                if u <= prev.1 {
                    return prev.0;
                }
                for &(z, f) in &grid[1..] {
                    if u <= f {
                        if f > prev.1 && z > prev.0 {
                            return prev.0 + (z - prev.0) * (u - prev.1) / (f - prev.1);
                        }
                        return z;
                    }
                    prev = (z, f);
                }
                grid.last().unwrap().0
            }
        }
    }

    /// Draws from the size-biased law z ν(dz)/E[z].
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            // size-biasing Exp(θ) gives Gamma(2, θ)
            LifespanKind::Exponential { theta } => {
                let e = Exp::new(*theta).expect("validated theta");
                e.sample(rng) + e.sample(rng)
            }
            LifespanKind::PointMass { z0 } => *z0,
            // density 2z/z_max²: inverse CDF is z_max sqrt(u)
            LifespanKind::Uniform { z_max } => z_max * rng.sample::<f64, _>(StandardUniform).sqrt(),
            LifespanKind::TableCdf { grid } => {
                let segs = table_segments(grid);
                let weights: Vec<f64> = segs
                    .iter()
                    .map(|s| match *s {
                        TableSeg::Uniform { lo, hi, w } => w * (lo + hi) / 2.0,
                        TableSeg::Atom { z, w } => w * z,
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut u: f64 = rng.sample::<f64, _>(StandardUniform) * total;
                for (seg, w) in segs.iter().zip(&weights) {
                    if u <= *w {
                        return match *seg {
                            TableSeg::Atom { z, .. } => z,
                            TableSeg::Uniform { lo, hi, .. } => {
                                let v: f64 = rng.sample(StandardUniform);
                                (lo * lo + v * (hi * hi - lo * lo)).sqrt()
                            }
                        };
                    }
                    u -= w;
                }
                match *segs.last().unwrap() {
                    TableSeg::Atom { z, .. } => z,
                    TableSeg::Uniform { hi, .. } => hi,
                }
            }
        }
    }

    /// CDF of the size-biased law, for KS oracles.
    pub fn size_biased_cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            // Gamma(2, θ): 1 − e^{−θz}(1 + θz)
            LifespanKind::Exponential { theta } => 1.0 - (-theta * z).exp() * (1.0 + theta * z),
            LifespanKind::PointMass { z0 } => {
                if z >= *z0 {
                    1.0
                } else {
                    0.0
                }
            }
            LifespanKind::Uniform { z_max } => ((z / z_max) * (z / z_max)).min(1.0),
            LifespanKind::TableCdf { grid } => {
                let segs = table_segments(grid);
                let total: f64 = segs
                    .iter()
                    .map(|s| match *s {
                        TableSeg::Uniform { lo, hi, w } => w * (lo + hi) / 2.0,
                        TableSeg::Atom { z, w } => w * z,
                    })
                    .sum();
                let mut acc = 0.0;
                for s in &segs {
                    match *s {
                        TableSeg::Atom { z: za, w } => {
                            if z >= za {
                                acc += w * za;
                            }
                        }
                        TableSeg::Uniform { lo, hi, w } => {
                            if z >= hi {
                                acc += w * (lo + hi) / 2.0;
                            } else if z > lo {
                                acc += w * (z * z - lo * lo) / (2.0 * (hi - lo));
                            }
                        }
                    }
                }
                acc / total
            }
        }
    }

    /// Offspring law of the embedded generation chain.
    pub fn offspring_law(&self) -> OffspringLaw<'_> {
        OffspringLaw { measure: self }
    }

    /// p_k = ∫ Λ(dz)/b · (bz)^k e^{−bz} / k!.
    pub fn offspring_pk(&self, k: u32) -> f64 {
        let b = self.b;
        match &self.kind {
            // Gamma integral collapses to a geometric law
            LifespanKind::Exponential { theta } => {
                (theta / (theta + b)) * (b / (theta + b)).powi(k as i32)
            }
            LifespanKind::PointMass { z0 } => poisson_pmf(b * z0, k),
            LifespanKind::Uniform { z_max } => gamma_p(k as f64 + 1.0, b * z_max) / (b * z_max),
            LifespanKind::TableCdf { grid } => table_segments(grid)
                .iter()
                .map(|s| match *s {
                    TableSeg::Atom { z, w } => w * poisson_pmf(b * z, k),
                    TableSeg::Uniform { lo, hi, w } => {
                        w * (gamma_p(k as f64 + 1.0, b * hi) - gamma_p(k as f64 + 1.0, b * lo))
                            / (b * (hi - lo))
                    }
                })
                .sum(),
        }
    }

    /// Offspring probability generating function f(s) = E[s^K] = L(b(1−s)).
    pub fn offspring_pgf(&self, s: f64) -> f64 {
        self.laplace(self.b * (1.0 - s))
    }

    /// Survival probabilities q_n = P(Z_n ≠ 0 | Z_0 = 1) of the BGW chain
    /// started from a single individual: q_0 = 1, q_n = 1 − f(1 − q_{n−1}),
    /// evaluated in the cancellation-free form (1 − L)(b q_{n−1}).
    pub fn gen_survival_q(&self, n: usize) -> f64 {
        let mut q = 1.0;
        for _ in 0..n {
            q = self.one_minus_laplace(self.b * q);
        }
        q
    }

    /// P_x(Z_a ≠ 0): probability that the splitting tree with ancestor
    /// lifetime x is alive at generation a ≥ 1, computed exactly from the
    /// pgf recursion through the Poisson(bx) first generation.
    pub fn survival_exact(&self, a: u32, x: f64) -> Result<f64> {
        if a == 0 {
            return Err(Error::Domain(
                "generation a=0: the ancestor is alive at generation 0 by convention".into(),
            ));
        }
        if !(x > 0.0) {
            return Err(Error::Domain(format!("x={x} must be positive")));
        }
        let q = self.gen_survival_q(a as usize - 1);
        Ok(-(-self.b * x * q).exp_m1())
    }

    /// Yaglom constant ĉ = lim q_n / m^n for subcritical measures, found by
    /// iterating until the ratio sequence stabilizes to relative tolerance
    /// `tol`. Returns (ĉ, n at stabilization).
    ///
    /// The x log x moment condition behind the limit holds automatically for
    /// every kind in this family (bounded support or exponential tail).
    pub fn yaglom_constant(&self, tol: f64) -> Result<(f64, usize)> {
        let m = self.m();
        if self.is_critical() {
            return Err(Error::Domain(
                "m=1 is critical: use kolmogorov_limit instead".into(),
            ));
        }
        let mut q = 1.0f64;
        let mut ratio = 1.0f64; // q_0 / m^0
        let mut mn = 1.0f64;
        for n in 1..=PGF_ITERATION_CAP {
            q = self.one_minus_laplace(self.b * q);
            mn *= m;
            let next = q / mn;
            if q < 1e-280 || mn < 1e-280 {
                return Err(Error::NoConvergence(format!(
                    "q_n underflowed at n={n} before reaching tol={tol}; last ratio {next}"
                )));
            }
            if (next - ratio).abs() <= tol * ratio.abs() {
                return Ok((next, n));
            }
            ratio = next;
        }
        Err(Error::NoConvergence(format!(
            "ratio q_n/m^n did not stabilize to {tol} within {PGF_ITERATION_CAP} iterations"
        )))
    }

    /// Critical-case decay: returns (n · q_n, 2/σ²) where σ² is the offspring
    /// variance; the two approach each other as n grows.
    pub fn kolmogorov_limit(&self, n: usize) -> Result<(f64, f64)> {
        if !self.is_critical() {
            return Err(Error::Domain(format!(
                "kolmogorov_limit requires m=1, got m={}",
                self.m()
            )));
        }
        if n == 0 {
            return Err(Error::Domain("n must be positive".into()));
        }
        let sigma2 = self.offspring_law().variance();
        Ok((n as f64 * self.gen_survival_q(n), 2.0 / sigma2))
    }
}

fn poisson_pmf(lambda: f64, k: u32) -> f64 {
    (k as f64 * lambda.ln() - lambda - crate::mc::ln_gamma(k as f64 + 1.0)).exp()
}

// ---------------------------------------------------------------------------
// Offspring law view
// ---------------------------------------------------------------------------

/// Mixed-Poisson offspring law of the generation chain embedded in the
/// splitting tree.
#[derive(Debug, Clone, Copy)]
pub struct OffspringLaw<'a> {
    measure: &'a LifespanMeasure,
}

impl OffspringLaw<'_> {
    pub fn pmf(&self, k: u32) -> f64 {
        self.measure.offspring_pk(k)
    }

    pub fn pgf(&self, s: f64) -> f64 {
        self.measure.offspring_pgf(s)
    }

    pub fn mean(&self) -> f64 {
        self.measure.m()
    }

    /// Var(K) = b²E[Z²] + m − m² (law of total variance for a Poisson count
    /// with mixed parameter bZ). Equals b∫z²Λ(dz) at criticality.
    pub fn variance(&self) -> f64 {
        let m = self.measure.m();
        // ∫z²Λ = b·E[Z²], so b²E[Z²] = b·second_moment()
        self.measure.b() * self.measure.second_moment() + m - m * m
    }

    /// Exact draw via the mixing representation: Z ~ ν, K ~ Poisson(bZ).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let z = self.measure.sample_lifetime(rng);
        let lambda = self.measure.b() * z;
        if lambda == 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("positive lambda").sample(rng) as u32
    }
}

// ---------------------------------------------------------------------------
// Brownian model and the top-level enum
// ---------------------------------------------------------------------------

/// Brownian motion with drift −α and variance 2β: ψ(λ) = αλ + βλ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianModel {
    pub alpha: f64,
    pub beta: f64,
}

impl BrownianModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "alpha={alpha} must be non-negative (the process must not drift to +infinity)"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidModel(format!("beta={beta} must be positive")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn psi(&self, lambda: f64) -> Result<f64> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "psi requires lambda >= 0, got {lambda}"
            )));
        }
        Ok(self.alpha * lambda + self.beta * lambda * lambda)
    }
}

/// Either regime of the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LevyModel {
    FiniteVariation(LifespanMeasure),
    Brownian(BrownianModel),
}

impl LevyModel {
    /// Laplace exponent of the model; convex with ψ(0) = 0 and
    /// ψ'(0) = 1 − m (finite variation) or α (Brownian).
    pub fn psi(&self, lambda: f64) -> Result<f64> {
        match self {
            LevyModel::FiniteVariation(m) => m.psi(lambda),
            LevyModel::Brownian(b) => b.psi(lambda),
        }
    }

    pub fn as_finite_variation(&self) -> Result<&LifespanMeasure> {
        match self {
            LevyModel::FiniteVariation(m) => Ok(m),
            LevyModel::Brownian(_) => Err(Error::Domain(
                "operation requires a finite-variation (lifespan-measure) model".into(),
            )),
        }
    }

    pub fn as_brownian(&self) -> Result<&BrownianModel> {
        match self {
            LevyModel::Brownian(b) => Ok(b),
            LevyModel::FiniteVariation(_) => {
                Err(Error::Domain("operation requires a Brownian model".into()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

/// JSON model specification: exactly one of `lifespan` or `brownian`.
///
/// ```json
/// {"lifespan": {"kind": "exponential", "theta": 1.0, "b": 0.8}}
/// {"brownian": {"alpha": 0.5, "beta": 1.0}}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifespan: Option<LifespanConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brownian: Option<BrownianConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LifespanConfig {
    Exponential { theta: f64, b: f64 },
    PointMass { z0: f64, b: f64 },
    Uniform { z_max: f64, b: f64 },
    TableCdf { grid: Vec<(f64, f64)>, b: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl ModelConfig {
    pub fn build(&self) -> Result<LevyModel> {
        match (&self.lifespan, &self.brownian) {
            (Some(l), None) => {
                let measure = match l.clone() {
                    LifespanConfig::Exponential { theta, b } => {
                        LifespanMeasure::exponential(b, theta)?
                    }
                    LifespanConfig::PointMass { z0, b } => LifespanMeasure::point_mass(b, z0)?,
                    LifespanConfig::Uniform { z_max, b } => LifespanMeasure::uniform(b, z_max)?,
                    LifespanConfig::TableCdf { grid, b } => LifespanMeasure::table_cdf(b, grid)?,
                };
                Ok(LevyModel::FiniteVariation(measure))
            }
            (None, Some(b)) => Ok(LevyModel::Brownian(BrownianModel::new(b.alpha, b.beta)?)),
            _ => Err(Error::InvalidModel(
                "config must contain exactly one of `lifespan` or `brownian`".into(),
            )),
        }
    }
}
