//! Statistical harness shared by every module: mergeable estimators,
//! Kolmogorov-Smirnov and chi-square tests, a weighted KS variant for
//! importance-sampled data, and reproducible counter-based random streams.
//!
//! Conventions used throughout the crate:
//! - mean comparisons gate on 3 standard errors,
//! - distributional tests gate on p > 0.01,
//! - replica `k` of a run with root seed `s` always draws from
//!   [`seed_stream`]`(s, k)`, so shards can be produced in any order on any
//!   number of workers and merged associatively.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Running mean/variance accumulator (Welford), mergeable across shards.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Estimator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Estimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. parallel merge; associative and commutative up to rounding.
    pub fn merge(&mut self, other: &Estimator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count as f64 - 1.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    /// |mean − target| in units of the standard error.
    pub fn z_against(&self, target: f64) -> f64 {
        let se = self.stderr();
        if se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / se
        }
    }
}

/// Accumulator for self-normalized importance-sampling ratios
/// `E*[f] ≈ Σ w_i f_i / Σ w_i`, with effective sample size diagnostics.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct WeightedEstimator {
    count: u64,
    sum_w: f64,
    sum_w2: f64,
    sum_wf: f64,
    sum_wf2: f64,
}

impl WeightedEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, w: f64, f: f64) {
        self.count += 1;
        self.sum_w += w;
        self.sum_w2 += w * w;
        self.sum_wf += w * f;
        self.sum_wf2 += w * f * w * f;
    }

    pub fn merge(&mut self, other: &WeightedEstimator) {
        self.count += other.count;
        self.sum_w += other.sum_w;
        self.sum_w2 += other.sum_w2;
        self.sum_wf += other.sum_wf;
        self.sum_wf2 += other.sum_wf2;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean_weight(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum_w / self.count as f64
    }

    /// Unnormalized estimate `(1/n) Σ w f` with its standard error.
    pub fn mean_and_stderr(&self) -> (f64, f64) {
        let n = self.count as f64;
        if self.count < 2 {
            return (self.sum_wf, f64::INFINITY);
        }
        let mean = self.sum_wf / n;
        let var = (self.sum_wf2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    /// Kish effective sample size `(Σw)²/Σw²`.
    pub fn effective_sample_size(&self) -> f64 {
        if self.sum_w2 == 0.0 {
            return 0.0;
        }
        self.sum_w * self.sum_w / self.sum_w2
    }
}

/// Outcome of a single statistical test, with enough context to replay it.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    /// p-value for distributional tests, absent for z-score gates.
    pub p_value: Option<f64>,
    /// max |mean − target|/SE for mean-constancy gates, absent otherwise.
    pub z_score: Option<f64>,
    pub pass: bool,
    pub sample_size: u64,
    pub seed: u64,
    pub config: String,
}

impl TestReport {
    pub fn one_line(&self) -> String {
        let detail = match (self.p_value, self.z_score) {
            (Some(p), _) => format!("stat={:.5} p={:.4}", self.statistic, p),
            (None, Some(z)) => format!("max|z|={:.3}", z),
            _ => format!("stat={:.5}", self.statistic),
        };
        format!(
            "{}: {} [{}] n={} seed={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            detail,
            self.sample_size,
            self.seed
        )
    }
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Independent, reproducible stream for replica `replica` of a run seeded by
/// `root_seed`. ChaCha keyed by the root seed, nonce set to the replica
/// index: replica k is addressable without generating replicas 0..k-1.
pub fn seed_stream(root_seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(replica);
    rng
}

/// Runs `n` independent replicas in parallel and folds their outputs in
/// replica order, so the result is identical for any worker count.
pub fn run_replicas<T, A, F, G>(root_seed: u64, n: u64, init: A, per_replica: F, fold: G) -> A
where
    T: Send,
    A: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
    G: Fn(&mut A, T) + Sync + Send,
{
    // Batched so that very large n does not materialize n intermediate values.
    const BATCH: u64 = 1 << 18;
    let mut acc = init;
    let mut start = 0u64;
    while start < n {
        let stop = (start + BATCH).min(n);
        let outs: Vec<T> = (start..stop)
            .into_par_iter()
            .map(|k| {
                let mut rng = seed_stream(root_seed, k);
                per_replica(k, &mut rng)
            })
            .collect();
        for t in outs {
            fold(&mut acc, t);
        }
        start = stop;
    }
    acc
}

// ---------------------------------------------------------------------------
// Mean-constancy (martingale) gate
// ---------------------------------------------------------------------------

/// Gate: every time point's empirical mean equals `target` within 3 SE.
/// `samples[i]` is the estimator of the process at grid time i.
pub fn martingale_constancy(
    name: &str,
    samples: &[Estimator],
    target: f64,
    seed: u64,
) -> TestReport {
    assert!(samples.len() >= 2, "need at least two time points");
    let max_z = samples
        .iter()
        .map(|e| e.z_against(target))
        .fold(0.0, f64::max);
    TestReport {
        name: name.to_string(),
        statistic: max_z,
        p_value: None,
        z_score: Some(max_z),
        pass: max_z < 3.0,
        sample_size: samples.iter().map(|e| e.count()).max().unwrap_or(0),
        seed,
        config: format!("target={target} points={}", samples.len()),
    }
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov
// ---------------------------------------------------------------------------

/// Complement of the asymptotic Kolmogorov CDF, `Q(z) = 1 - K(z)`,
/// power-series form from Numerical Recipes (Press et al. 2007).
pub fn kolmogorov_q(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z < 1.18 {
        let factor = (2.0 * std::f64::consts::PI).sqrt() / z;
        let t = (-std::f64::consts::PI * std::f64::consts::PI / (8.0 * z * z)).exp();
        1.0 - factor * (t + t.powi(9) + t.powi(25) + t.powi(49))
    } else {
        let t = (-2.0 * z * z).exp();
        2.0 * (t - t.powi(4) + t.powi(9))
    }
}

fn ks_p_value(stat: f64, n_eff: f64) -> f64 {
    let sqrt_n = n_eff.sqrt();
    kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * stat)
}

fn sort_f64(v: &mut [f64]) {
    v.sort_unstable_by(f64::total_cmp);
}

/// One-sample KS test of `samples` against the CDF `cdf`.
pub fn ks_vs_cdf(
    name: &str,
    mut samples: Vec<f64>,
    cdf: impl Fn(f64) -> f64,
    significance: f64,
    seed: u64,
) -> TestReport {
    sort_f64(&mut samples);
    let n = samples.len();
    let nf = n as f64;
    let mut stat = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        stat = stat.max((f - i as f64 / nf).abs());
        stat = stat.max(((i + 1) as f64 / nf - f).abs());
    }
    let p = ks_p_value(stat, nf);
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: n as u64,
        seed,
        config: format!("one-sample KS, significance={significance}"),
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(
    name: &str,
    mut a: Vec<f64>,
    mut b: Vec<f64>,
    significance: f64,
    seed: u64,
) -> TestReport {
    sort_f64(&mut a);
    sort_f64(&mut b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut stat = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        let (xa, xb) = (a[i], b[j]);
        let x = xa.min(xb);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        stat = stat.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    let p = ks_p_value(stat, n_eff);
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: (a.len() + b.len()) as u64,
        seed,
        config: format!("two-sample KS, significance={significance}"),
    }
}

/// Weighted one-sample KS test for importance-sampled data: compares the
/// self-normalized weighted empirical CDF of `samples` against `cdf`, using
/// the Kish effective sample size in the p-value. Entries with zero weight
/// are ignored.
pub fn weighted_ks_vs_cdf(
    name: &str,
    samples: &[f64],
    weights: &[f64],
    cdf: impl Fn(f64) -> f64,
    significance: f64,
    seed: u64,
) -> TestReport {
    assert_eq!(samples.len(), weights.len());
    let mut pairs: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    pairs.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
    let sum_w: f64 = pairs.iter().map(|p| p.1).sum();
    let sum_w2: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let n_eff = if sum_w2 > 0.0 {
        sum_w * sum_w / sum_w2
    } else {
        0.0
    };
    let mut acc = 0.0;
    let mut stat = 0.0f64;
    for &(x, w) in &pairs {
        let f = cdf(x);
        stat = stat.max((f - acc / sum_w).abs());
        acc += w;
        stat = stat.max((acc / sum_w - f).abs());
    }
    let p = if n_eff > 0.0 {
        ks_p_value(stat, n_eff)
    } else {
        1.0
    };
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: pairs.len() as u64,
        seed,
        config: format!("weighted KS, n_eff={n_eff:.1}, significance={significance}"),
    }
}

/// Two-sample KS between a weighted sample (self-normalized) and a plain
/// one; the p-value uses the Kish effective size on the weighted side.
pub fn ks_two_sample_weighted(
    name: &str,
    a: &[f64],
    a_weights: &[f64],
    b: Vec<f64>,
    significance: f64,
    seed: u64,
) -> TestReport {
    assert_eq!(a.len(), a_weights.len());
    let mut wa: Vec<(f64, f64)> = a
        .iter()
        .copied()
        .zip(a_weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    wa.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
    let mut b = b;
    sort_f64(&mut b);
    let sum_w: f64 = wa.iter().map(|p| p.1).sum();
    let sum_w2: f64 = wa.iter().map(|p| p.1 * p.1).sum();
    let n_eff = if sum_w2 > 0.0 {
        sum_w * sum_w / sum_w2
    } else {
        0.0
    };
    let nb = b.len() as f64;
    let mut stat = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut acc = 0.0;
    while i < wa.len() && j < b.len() {
        let x = wa[i].0.min(b[j]);
        while i < wa.len() && wa[i].0 <= x {
            acc += wa[i].1;
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        stat = stat.max((acc / sum_w - j as f64 / nb).abs());
    }
    let n_comb = if n_eff > 0.0 {
        n_eff * nb / (n_eff + nb)
    } else {
        0.0
    };
    let p = if n_comb > 0.0 {
        ks_p_value(stat, n_comb)
    } else {
        1.0
    };
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: (wa.len() + b.len()) as u64,
        seed,
        config: format!("weighted two-sample KS, n_eff={n_eff:.1}, significance={significance}"),
    }
}

// ---------------------------------------------------------------------------
// Chi-square
// ---------------------------------------------------------------------------

/// Regularized lower incomplete gamma P(a, x) (series / continued fraction,
/// Numerical Recipes style).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    // Lentz's continued fraction for Q(a,x), x >= a+1.
    let fpmin = f64::MIN_POSITIVE / 1e-30;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / fpmin;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < fpmin {
            d = fpmin;
        }
        c = b + an / c;
        if c.abs() < fpmin {
            c = fpmin;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// ln Γ(x) by the Lanczos approximation (g = 5, 6 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Chi-square goodness-of-fit of observed category counts against expected
/// probabilities. Categories with expected count below `min_expected` are
/// pooled into their right neighbour (tail pooling).
pub fn chi_square_gof(
    name: &str,
    observed: &[u64],
    expected_probs: &[f64],
    significance: f64,
    seed: u64,
) -> TestReport {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let min_expected = 5.0;
    // pool from the right so sparse tail cells merge
    let mut obs: Vec<f64> = Vec::new();
    let mut exp: Vec<f64> = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &p) in observed.iter().zip(expected_probs).rev() {
        acc_o += o as f64;
        acc_e += p * nf;
        if acc_e >= min_expected {
            obs.push(acc_o);
            exp.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
            *o += acc_o;
            *e += acc_e;
        } else {
            obs.push(acc_o);
            exp.push(acc_e.max(1e-12));
        }
    }
    let stat: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = obs.len().saturating_sub(1).max(1) as f64;
    let p = gamma_q(dof / 2.0, stat / 2.0);
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: n,
        seed,
        config: format!("chi-square GOF, dof={dof}, significance={significance}"),
    }
}

/// Two-sample chi-square homogeneity test on category counts.
pub fn chi_square_two_sample(
    name: &str,
    a: &[u64],
    b: &[u64],
    significance: f64,
    seed: u64,
) -> TestReport {
    let k = a.len().max(b.len());
    let get = |v: &[u64], i: usize| *v.get(i).unwrap_or(&0) as f64;
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    // pool cells so every expected count is >= 5 in both rows
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for i in 0..k {
        acc.0 += get(a, i);
        acc.1 += get(b, i);
        let tot = acc.0 + acc.1;
        if tot * na / (na + nb) >= 5.0 && tot * nb / (na + nb) >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if (acc.0 > 0.0 || acc.1 > 0.0) && !cells.is_empty() {
        let last = cells.last_mut().unwrap();
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let mut stat = 0.0;
    for &(oa, ob) in &cells {
        let tot = oa + ob;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
    }
    let dof = cells.len().saturating_sub(1).max(1) as f64;
    let p = gamma_q(dof / 2.0, stat / 2.0);
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: (na + nb) as u64,
        seed,
        config: format!("chi-square homogeneity, dof={dof}, significance={significance}"),
    }
}

/// Chi-square independence test on an r×c contingency table.
pub fn chi_square_independence(
    name: &str,
    table: &[Vec<u64>],
    significance: f64,
    seed: u64,
) -> TestReport {
    let rows = table.len();
    let cols = table[0].len();
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let n: f64 = row_sums.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / n;
            if e > 0.0 {
                stat += (o as f64 - e) * (o as f64 - e) / e;
            }
        }
    }
    let dof = ((rows - 1) * (cols - 1)).max(1) as f64;
    let p = gamma_q(dof / 2.0, stat / 2.0);
    TestReport {
        name: name.to_string(),
        statistic: stat,
        p_value: Some(p),
        z_score: None,
        pass: p > significance,
        sample_size: n as u64,
        seed,
        config: format!(
            "chi-square independence {rows}x{cols}, dof={dof}, significance={significance}"
        ),
    }
}
