//! The explicit infinite-variation case: Brownian motion with drift −α and
//! variance 2β (ψ(λ) = αλ + βλ²), where the height process is
//! H_t = (X_t − I_t)/β and the conditioning martingale has the closed
//! Kennedy form I_{t∧T0} + (β/α)(e^{(α/β)(X_t−I_t)} − 1).
//!
//! Paths are Euler grids refined with exact Brownian-bridge minima: within
//! each step the conditional minimum given the endpoints is sampled in
//! closed form, so absorption at 0 is detected with the exact crossing
//! probability exp(−2 X_k X_{k+1}/(σ² dt)) and the running infimum carries
//! no first-order grid bias. Grid detection of height events keeps an
//! O(√dt) bias that the dt-refinement reports make visible.

use crate::error::{Error, Result};
use crate::mc::{self, Estimator, TestReport, WeightedEstimator};
use crate::model::BrownianModel;
use rand::Rng;
use rand_distr::{StandardNormal, StandardUniform};

/// Exact draw of min of a Brownian bridge from `a` to `b` over a step of
/// length `dt` with variance rate `sig2`.
fn bridge_min<R: Rng + ?Sized>(a: f64, b: f64, sig2dt: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(StandardUniform);
    let u = u.max(f64::MIN_POSITIVE);
    0.5 * (a + b - ((a - b) * (a - b) - 2.0 * sig2dt * u.ln()).sqrt())
}

/// Euler path on a dt-grid with per-step bridge minima.
#[derive(Debug, Clone)]
pub struct EulerPath {
    pub dt: f64,
    /// Grid values X_0..X_K (the last value may be negative when absorbed).
    pub values: Vec<f64>,
    /// Bridge-sampled minimum within step k (between values[k], values[k+1]).
    pub step_mins: Vec<f64>,
    /// Index of the step whose bridge minimum first reached 0, if any.
    pub absorbed_at: Option<usize>,
}

impl EulerPath {
    /// Running infimum up to grid index k, refined by the bridge minima.
    pub fn inf_at(&self, k: usize) -> f64 {
        let mut inf = self.values[0];
        for j in 0..k.min(self.step_mins.len()) {
            inf = inf.min(self.step_mins[j]);
        }
        inf.min(self.values[k])
    }

    pub fn absorbed_before(&self, k: usize) -> bool {
        self.absorbed_at.is_some_and(|j| j < k)
    }
}

/// Simulates the Euler path from `x` until absorption at 0 or the horizon.
pub fn simulate_bm<R: Rng + ?Sized>(
    model: &BrownianModel,
    x: f64,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<EulerPath> {
    if !(x > 0.0 && dt > 0.0 && horizon > 0.0) {
        return Err(Error::Domain("need x > 0, dt > 0, horizon > 0".into()));
    }
    let steps = (horizon / dt).ceil() as usize;
    let sig = (2.0 * model.beta * dt).sqrt();
    let sig2dt = 2.0 * model.beta * dt;
    let drift = -model.alpha * dt;
    let mut values = Vec::with_capacity(steps + 1);
    let mut step_mins = Vec::with_capacity(steps);
    values.push(x);
    let mut cur = x;
    let mut absorbed_at = None;
    for k in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let next = cur + drift + sig * z;
        let m = bridge_min(cur, next, sig2dt, rng).min(cur).min(next);
        values.push(next);
        step_mins.push(m);
        if m <= 0.0 {
            absorbed_at = Some(k);
            break;
        }
        cur = next;
    }
    Ok(EulerPath {
        dt,
        values,
        step_mins,
        absorbed_at,
    })
}

/// Height H at grid index k: (X_k − I_k)/β. Undefined after absorption.
pub fn height_bm(model: &BrownianModel, p: &EulerPath, k: usize) -> Result<f64> {
    if p.absorbed_at.is_some_and(|j| k > j) {
        return Err(Error::Domain(format!("grid index {k} is after absorption")));
    }
    if k >= p.values.len() {
        return Err(Error::Domain(format!("grid index {k} beyond the path")));
    }
    Ok((p.values[k] - p.inf_at(k)) / model.beta)
}

/// Kennedy martingale at grid index k:
/// I_k + (β/α)(e^{(α/β)(X_k−I_k)} − 1) before absorption, 0 after (at T0 the
/// infimum is 0 and X = I, so the stopped value vanishes). Requires α > 0;
/// in the recurrent case α = 0 the martingale is X itself.
pub fn kennedy_m(model: &BrownianModel, p: &EulerPath, k: usize) -> Result<f64> {
    if model.alpha <= 0.0 {
        return Err(Error::Domain(
            "kennedy_m requires alpha > 0; for alpha = 0 the martingale is X itself".into(),
        ));
    }
    if p.absorbed_at.is_some_and(|j| k > j) {
        return Ok(0.0);
    }
    if k >= p.values.len() {
        return Err(Error::Domain(format!("grid index {k} beyond the path")));
    }
    let i = p.inf_at(k);
    let h = p.values[k] - i;
    Ok(i + model.beta / model.alpha * ((model.alpha / model.beta * h).exp_m1()))
}

/// v(a) = N(sup H > a), the inverse of φ(t) = ∫_t^∞ dλ/ψ(λ):
/// α/(β(e^{αa} − 1)) for α > 0 and 1/(βa) for α = 0, so that
/// P_x(sup H ≥ a before T0) = 1 − e^{−x v(a)}.
pub fn v_of_a(model: &BrownianModel, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("a={a} must be positive")));
    }
    if model.alpha > 0.0 {
        Ok(model.alpha / (model.beta * (model.alpha * a).exp_m1()))
    } else {
        Ok(1.0 / (model.beta * a))
    }
}

/// One dt level of the survival check.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SurvivalRow {
    pub dt: f64,
    pub n: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub abs_error: f64,
    /// Paths that neither got absorbed nor reached the height within the
    /// step budget (censored as failures, reported here).
    pub unresolved: u64,
}

/// dt-refinement report for P_x(sup H ≥ a before T0) against 1 − e^{−x v(a)}.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SurvivalReport {
    pub x: f64,
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub target: f64,
    pub rows: Vec<SurvivalRow>,
}

impl SurvivalReport {
    /// Observed discretization trend: |estimate(dt_mid) − estimate(dt_fine)|
    /// between the two finest levels.
    pub fn trend(&self) -> f64 {
        let k = self.rows.len();
        if k < 2 {
            return f64::INFINITY;
        }
        (self.rows[k - 2].estimate - self.rows[k - 1].estimate).abs()
    }

    /// Gate: the finest-level error is within 2(SE + trend).
    pub fn final_gate(&self) -> bool {
        let last = self.rows.last().expect("at least one row");
        last.abs_error < 2.0 * (last.stderr + self.trend())
    }
}

/// Monte Carlo estimate of the survival probability at each dt, one path =
/// race between absorption (bridge-detected) and the grid height event
/// X − I ≥ βa.
pub fn survival_check(
    model: &BrownianModel,
    x: f64,
    a: f64,
    dts: &[f64],
    n: u64,
    horizon: f64,
    seed: u64,
) -> Result<SurvivalReport> {
    if !(x > 0.0 && a > 0.0) {
        return Err(Error::Domain("need x > 0 and a > 0".into()));
    }
    let target = -(-x * v_of_a(model, a)?).exp_m1();
    let mut rows = Vec::with_capacity(dts.len());
    for (level, &dt) in dts.iter().enumerate() {
        let threshold = model.beta * a;
        let sig = (2.0 * model.beta * dt).sqrt();
        let sig2dt = 2.0 * model.beta * dt;
        let drift = -model.alpha * dt;
        let max_steps = (horizon / dt).ceil() as usize;
        let (est, unresolved) = mc::run_replicas(
            seed.wrapping_add(level as u64) ^ 0x5e7_0000,
            n,
            (Estimator::new(), 0u64),
            |_, rng| {
                // streaming race, no path materialization
                let mut cur = x;
                let mut inf = x;
                for _ in 0..max_steps {
                    if cur - inf >= threshold {
                        return 1u8; // reached height a
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    let next = cur + drift + sig * z;
                    let m = bridge_min(cur, next, sig2dt, rng).min(cur).min(next);
                    if m <= 0.0 {
                        return 0u8; // absorbed before the height event
                    }
                    inf = inf.min(m);
                    cur = next;
                }
                2u8 // unresolved within the horizon
            },
            |acc, r| {
                acc.0.push(f64::from(r == 1));
                acc.1 += u64::from(r == 2);
            },
        );
        rows.push(SurvivalRow {
            dt,
            n,
            estimate: est.mean(),
            stderr: est.stderr(),
            abs_error: (est.mean() - target).abs(),
            unresolved,
        });
    }
    Ok(SurvivalReport {
        x,
        a,
        alpha: model.alpha,
        beta: model.beta,
        target,
        rows,
    })
}

/// Mean of the stopped height martingale across a time grid; the martingale
/// is Kennedy's for α > 0 and X itself for α = 0.
pub fn kennedy_check(
    model: &BrownianModel,
    x: f64,
    t_grid: &[f64],
    dt: f64,
    n: u64,
    seed: u64,
) -> Result<(Vec<Estimator>, TestReport)> {
    if t_grid.len() < 2 {
        return Err(Error::Domain("need at least two grid times".into()));
    }
    let grid_steps: Vec<usize> = t_grid
        .iter()
        .map(|t| {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Domain(format!("t={t} is not a multiple of dt={dt}")));
            }
            Ok(k as usize)
        })
        .collect::<Result<_>>()?;
    let max_steps = *grid_steps.last().expect("non-empty grid");
    let alpha = model.alpha;
    let beta = model.beta;
    let sig = (2.0 * beta * dt).sqrt();
    let sig2dt = 2.0 * beta * dt;
    let ests = mc::run_replicas(
        seed,
        n,
        vec![Estimator::new(); t_grid.len()],
        |_, rng| {
            let mut out = vec![0.0f64; grid_steps.len()];
            let mut cur = x;
            let mut inf = x;
            let mut absorbed = false;
            let mut gi = 0;
            for k in 0..=max_steps {
                if gi < grid_steps.len() && k == grid_steps[gi] {
                    out[gi] = if absorbed {
                        0.0
                    } else if alpha > 0.0 {
                        inf + beta / alpha * ((alpha / beta) * (cur - inf)).exp_m1()
                    } else {
                        cur
                    };
                    gi += 1;
                }
                if gi == grid_steps.len() {
                    break;
                }
                if !absorbed {
                    let z: f64 = rng.sample(StandardNormal);
                    let next = cur + (-alpha) * dt + sig * z;
                    let m = bridge_min(cur, next, sig2dt, rng).min(cur).min(next);
                    if m <= 0.0 {
                        absorbed = true;
                    } else {
                        inf = inf.min(m);
                        cur = next;
                    }
                }
            }
            out
        },
        |acc, out| {
            for (e, v) in acc.iter_mut().zip(&out) {
                e.push(*v);
            }
        },
    );
    let report = mc::martingale_constancy(
        &format!("height martingale mean (alpha={alpha}, beta={beta}, dt={dt})"),
        &ests,
        x,
        seed,
    );
    Ok((ests, report))
}

/// Minimum-decomposition check at a large time `t`: under the conditioned
/// law the ultimate infimum is uniform on [0, x], probed here by weighting
/// unconditioned paths with the Kennedy martingale value at t∧T0.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MinimumReport {
    pub t: f64,
    pub dt: f64,
    pub n: u64,
    pub alive: u64,
    /// Self-normalized weighted CDF of I_t vs Uniform(0, x).
    pub weighted_ks: TestReport,
    /// Unweighted CDF of I_t vs Uniform(0, x): must fail (negative control);
    /// `pass` is true when the KS test rejects.
    pub unweighted_control: TestReport,
    /// Weighted estimate of P*(I_t ≤ x/2) with its target 1/2.
    pub p_half: f64,
    pub p_half_stderr: f64,
    /// Weighted mean of I_t with its target x/2.
    pub mean_inf: f64,
    /// Weighted correlation between I_t and X_t − I_t (pre vs post minimum);
    /// near 0 under the conditioned law.
    pub pre_post_corr: f64,
    pub effective_sample_size: f64,
    pub mean_weight: f64,
}

pub fn minimum_decomposition_check(
    model: &BrownianModel,
    x: f64,
    t: f64,
    dt: f64,
    n: u64,
    seed: u64,
) -> Result<MinimumReport> {
    if model.alpha <= 0.0 {
        return Err(Error::Domain(
            "the minimum stabilizes only for alpha > 0 (drift up under the conditioned law)".into(),
        ));
    }
    let steps = (t / dt).round() as usize;
    let alpha = model.alpha;
    let beta = model.beta;
    let sig = (2.0 * beta * dt).sqrt();
    let sig2dt = 2.0 * beta * dt;
    // collect (I_t, X_t − I_t, weight) per path; weight 0 when absorbed
    let samples: Vec<(f64, f64, f64)> = mc::run_replicas(
        seed,
        n,
        Vec::with_capacity(n as usize),
        |_, rng| {
            let mut cur = x;
            let mut inf = x;
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let next = cur + (-alpha) * dt + sig * z;
                let m = bridge_min(cur, next, sig2dt, rng).min(cur).min(next);
                if m <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                inf = inf.min(m);
                cur = next;
            }
            let w = (inf + beta / alpha * ((alpha / beta) * (cur - inf)).exp_m1()) / x;
            (inf, cur - inf, w)
        },
        |acc, s| acc.push(s),
    );
    let alive = samples.iter().filter(|s| s.2 > 0.0).count() as u64;
    let infs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let weights: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let unif_cdf = move |y: f64| (y / x).clamp(0.0, 1.0);
    let weighted_ks = mc::weighted_ks_vs_cdf(
        "weighted CDF of I_t vs Uniform(0,x)",
        &infs,
        &weights,
        unif_cdf,
        0.01,
        seed,
    );
    let plain = mc::ks_vs_cdf(
        "unweighted CDF of I_t vs Uniform(0,x) (must reject)",
        infs.clone(),
        unif_cdf,
        0.01,
        seed,
    );
    let unweighted_control = TestReport {
        pass: !plain.pass,
        ..plain
    };
    // weighted point estimates
    let mut acc_half = WeightedEstimator::new();
    let mut acc_mean = WeightedEstimator::new();
    let mut wsum = 0.0;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, h, w) in &samples {
        acc_half.push(w, f64::from(i <= x / 2.0));
        acc_mean.push(w, i);
        wsum += w;
        sx += w * i;
        sy += w * h;
        sxx += w * i * i;
        syy += w * h * h;
        sxy += w * i * h;
    }
    let (p_half, p_half_se) = acc_half.mean_and_stderr();
    let (mean_inf, _) = acc_mean.mean_and_stderr();
    let (mx, my) = (sx / wsum, sy / wsum);
    let cov = sxy / wsum - mx * my;
    let (vx, vy) = (sxx / wsum - mx * mx, syy / wsum - my * my);
    let pre_post_corr = cov / (vx * vy).sqrt();
    Ok(MinimumReport {
        t,
        dt,
        n,
        alive,
        weighted_ks,
        unweighted_control,
        p_half,
        p_half_stderr: p_half_se,
        mean_inf,
        pre_post_corr,
        effective_sample_size: acc_half.effective_sample_size(),
        mean_weight: acc_half.mean_weight(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::seed_stream;

    fn model(alpha: f64) -> BrownianModel {
        BrownianModel::new(alpha, 1.0).unwrap()
    }

    #[test]
    fn v_of_a_closed_forms() {
        // α=0, β=1, a=2 → 0.5
        assert!((v_of_a(&model(0.0), 2.0).unwrap() - 0.5).abs() < 1e-15);
        // α=1, β=1, a=1 → 1/(e−1)
        let v = v_of_a(&model(1.0), 1.0).unwrap();
        assert!((v - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((v - 0.58198).abs() < 1e-5);
        assert!(v_of_a(&model(1.0), 0.0).is_err());
    }

    /// Numeric inversion of φ(t) = ∫_t^∞ dλ/ψ(λ) as an independent oracle:
    /// Simpson in log-λ up to a large cutoff plus a geometric series tail.
    fn v_by_quadrature(m: &BrownianModel, a: f64) -> f64 {
        let phi = |t: f64| {
            let cutoff = 1e4 * (1.0 + m.alpha / m.beta).max(t);
            // ∫_t^cutoff dλ/ψ(λ) with λ = t e^u: integrand λ/ψ(λ) du
            let n = 40_000; // even
            let h = (cutoff / t).ln() / n as f64;
            let g = |u: f64| {
                let l = t * u.exp();
                l / (m.alpha * l + m.beta * l * l)
            };
            let mut acc = g(0.0) + g(n as f64 * h);
            for i in 1..n {
                acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let head = acc * h / 3.0;
            // tail: ∫_Λ^∞ dλ/(βλ²(1+α/(βλ))) = (1/β) Σ_k (−α/β)^k Λ^{−1−k}/(1+k)
            let r = -m.alpha / (m.beta * cutoff);
            let mut tail = 0.0;
            let mut pw = 1.0;
            for k in 0..30 {
                tail += pw / ((1 + k) as f64 * cutoff);
                pw *= r;
            }
            head + tail / m.beta
        };
        // bisection for phi(v) = a
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if phi(mid) > a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }

    #[test]
    fn v_of_a_matches_quadrature_inversion() {
        let mut rng = seed_stream(50, 0);
        for _ in 0..20 {
            let alpha = rand::Rng::random::<f64>(&mut rng) * 2.0;
            let beta = 0.2 + rand::Rng::random::<f64>(&mut rng) * 2.0;
            let a = 0.2 + rand::Rng::random::<f64>(&mut rng) * 3.0;
            let m = BrownianModel::new(alpha, beta).unwrap();
            let v = v_of_a(&m, a).unwrap();
            let vq = v_by_quadrature(&m, a);
            assert!(
                (v - vq).abs() <= 1e-8 * (1.0 + v.abs()) + 2e-8,
                "alpha={alpha} beta={beta} a={a}: {v} vs {vq}"
            );
        }
    }

    #[test]
    fn v_ratio_limit() {
        // v(a−u)/v(a) → e^{αu} as a → ∞
        let m = model(1.0);
        let a = 50.0;
        for u in [0.5, 1.0, 2.0] {
            let ratio = v_of_a(&m, a - u).unwrap() / v_of_a(&m, a).unwrap();
            assert!(
                (ratio - (m.alpha * u).exp()).abs() < 1e-6 * ratio,
                "u={u}: {ratio}"
            );
        }
    }

    #[test]
    fn driftless_path_is_gaussian_and_martingale() {
        let m = model(0.0);
        let mut rng = seed_stream(51, 0);
        let dt = 1e-3;
        // increments standardized by sqrt(2β dt) should be N(0,1)
        let p = simulate_bm(&m, 100.0, dt, 5.0, &mut rng).unwrap();
        let incs: Vec<f64> = p
            .values
            .windows(2)
            .map(|w| (w[1] - w[0]) / (2.0f64 * dt).sqrt())
            .collect();
        let rep = mc::ks_vs_cdf(
            "gaussian increments",
            incs,
            |z| 0.5 * (1.0 + erf_approx(z / std::f64::consts::SQRT_2)),
            0.01,
            51,
        );
        assert!(rep.pass, "{}", rep.one_line());
        // stopped mean: E[X_{t∧T0}] = x
        let mut est = Estimator::new();
        for _ in 0..20_000 {
            let p = simulate_bm(&m, 1.0, dt, 1.0, &mut rng).unwrap();
            est.push(if p.absorbed_at.is_some() {
                0.0
            } else {
                *p.values.last().unwrap()
            });
        }
        assert!(est.z_against(1.0) < 4.0, "mean {}", est.mean());
    }

    /// Abramowitz-Stegun 7.1.26 rational approximation, |err| < 1.5e-7.
    fn erf_approx(x: f64) -> f64 {
        let s = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        s * y
    }

    #[test]
    fn height_and_kennedy_basics() {
        let m = model(1.0);
        let mut rng = seed_stream(52, 0);
        let p = simulate_bm(&m, 1.0, 1e-3, 10.0, &mut rng).unwrap();
        assert_eq!(height_bm(&m, &p, 0).unwrap(), 0.0);
        assert!((kennedy_m(&m, &p, 0).unwrap() - 1.0).abs() < 1e-12);
        if let Some(j) = p.absorbed_at {
            assert_eq!(kennedy_m(&m, &p, j + 1).unwrap(), 0.0);
            assert!(height_bm(&m, &p, j + 1).is_err());
        }
        assert!(kennedy_m(&model(0.0), &p, 0).is_err());
    }

    #[test]
    fn kennedy_mean_constancy_small() {
        let m = model(1.0);
        let (ests, report) = kennedy_check(&m, 1.0, &[0.25, 0.5, 1.0], 1e-3, 30_000, 53).unwrap();
        assert!(
            report.pass,
            "{} means={:?}",
            report.one_line(),
            ests.iter().map(|e| e.mean()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn survival_check_converges() {
        // α=0, β=1, x=1, a=2: target 1 − e^{−0.5} ≈ 0.39347
        let m = model(0.0);
        let rep = survival_check(&m, 1.0, 2.0, &[1e-2, 1e-3], 20_000, 500.0, 54).unwrap();
        assert!((rep.target - 0.39347).abs() < 1e-5);
        assert!(rep.rows[1].abs_error <= rep.rows[0].abs_error + 2.0 * rep.rows[0].stderr);
        assert_eq!(rep.rows[0].unresolved, 0);
        // monotone decreasing in a, and a → 0 gives probability → 1
        let rep_small = survival_check(&m, 1.0, 0.05, &[1e-3], 5_000, 500.0, 54).unwrap();
        assert!(rep_small.target > 0.999);
        assert!(rep_small.rows[0].estimate > 0.99);
        let rep_big = survival_check(&m, 1.0, 4.0, &[1e-3], 5_000, 500.0, 54).unwrap();
        assert!(rep_big.rows[0].estimate < rep.rows[1].estimate);
    }

    #[test]
    fn minimum_decomposition_small() {
        let m = model(1.0);
        let rep = minimum_decomposition_check(&m, 1.0, 6.0, 1e-3, 30_000, 55).unwrap();
        assert!(rep.weighted_ks.pass, "{}", rep.weighted_ks.one_line());
        assert!(rep.unweighted_control.pass, "control must reject");
        let z = (rep.p_half - 0.5).abs() / rep.p_half_stderr;
        assert!(z < 4.0, "P*(I<=x/2)={} z={z}", rep.p_half);
        assert!(minimum_decomposition_check(&model(0.0), 1.0, 6.0, 1e-3, 100, 55).is_err());
    }
}
