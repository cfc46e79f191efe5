//! Direct simulation of the compensated compound Poisson path (no tree in
//! sight), time reversal, and the record/overshoot statistics of the
//! time-reversed process.
//!
//! The reversed path X^{(t)}_s = X_{t−} − X_{(t−s)−} (convention
//! X_{0−} = X_0) is again a slope −1 path with positive jumps, distributed
//! like the process started at 0. Its strict ascending-supremum records carry
//! the same information as the forward height process: the record count over
//! [0, t] equals H_t and the record overshoots are the masses ρ_i^t in
//! reverse order, with the first-record law
//! E[e^{−λρ̃₁}; T̃₁ < ∞] = 1 − ψ(λ)/λ and P(T̃₁ < ∞) = m.

use crate::contour::{JccpPath, Jump, Kahan};
use crate::error::{Error, Result};
use crate::model::LifespanMeasure;
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Simulates the Lévy path under P_x killed at min(T0, horizon). Between
/// jumps the path decreases at unit rate, so the hitting time of 0 is exact.
pub fn simulate_cpp<R: Rng + ?Sized>(
    measure: &LifespanMeasure,
    x: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<JccpPath> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("x={x} must be positive")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon={horizon} must be positive")));
    }
    let exp_b = Exp::new(measure.b()).expect("b > 0");
    let mut jumps = Vec::new();
    let mut time = Kahan::new(0.0);
    let mut value = Kahan::new(x);
    loop {
        let gap = exp_b.sample(rng);
        let v = value.value();
        if v <= gap {
            // hits 0 before the next jump
            let t0 = time.value() + v;
            if t0 > horizon {
                return JccpPath::new(x, jumps, horizon, false);
            }
            return JccpPath::new(x, jumps, t0, true);
        }
        time.add(gap);
        if time.value() > horizon {
            return JccpPath::new(x, jumps, horizon, false);
        }
        value.add(-gap);
        let size = measure.sample_lifetime(rng);
        value.add(size);
        jumps.push(Jump {
            time: time.value(),
            size,
        });
    }
}

/// Simulates the raw Lévy path from `x0` (any sign) over [0, horizon],
/// without killing; used for reversal identities and record statistics.
pub fn simulate_levy_path<R: Rng + ?Sized>(
    measure: &LifespanMeasure,
    x0: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<JccpPath> {
    if !(horizon > 0.0) || !x0.is_finite() {
        return Err(Error::Domain("need finite x0 and positive horizon".into()));
    }
    let exp_b = Exp::new(measure.b()).expect("b > 0");
    let mut jumps = Vec::new();
    let mut time = Kahan::new(0.0);
    loop {
        let gap = exp_b.sample(rng);
        time.add(gap);
        if time.value() > horizon {
            return JccpPath::new(x0, jumps, horizon, false);
        }
        jumps.push(Jump {
            time: time.value(),
            size: measure.sample_lifetime(rng),
        });
    }
}

/// Time reversal at `t`: X^{(t)}_s = X_{t−} − X_{(t−s)−} on [0, t], with
/// X_{0−} = X_0. The result starts at 0 and keeps slope −1 with positive
/// jumps (a jump of X at time u becomes a jump of the same size at t − u);
/// a jump at exactly u = t falls outside the left-limit window and is
/// dropped.
pub fn time_reverse(p: &JccpPath, t: f64) -> Result<JccpPath> {
    if !(t > 0.0) || t > p.end_time() {
        return Err(Error::Domain(format!(
            "reversal time t={t} outside (0, {}]",
            p.end_time()
        )));
    }
    let mut jumps: Vec<Jump> = p
        .jumps()
        .iter()
        .filter(|j| j.time < t)
        .map(|j| Jump {
            time: t - j.time,
            size: j.size,
        })
        .collect();
    jumps.reverse();
    JccpPath::new(0.0, jumps, t, false)
}

/// Why a record scan stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStop {
    /// The whole window [0, end] was scanned.
    WindowEnd,
    /// The path sank so far below its supremum that a further record has
    /// probability below the Lundberg bound at the configured depth.
    DepthCut,
    /// The time horizon was hit first; record counts are censored.
    Horizon,
}

/// Strict ascending-supremum records of a path: times, overshoots above the
/// previous supremum, the gap below the supremum just before the record
/// jump, and the jump sizes.
#[derive(Debug, Clone)]
pub struct RecordStats {
    pub times: Vec<f64>,
    pub overshoots: Vec<f64>,
    pub pre_gaps: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub stopped: RecordStop,
}

impl RecordStats {
    pub fn count(&self) -> usize {
        self.times.len()
    }
}

/// Extracts the records of an existing path (typically a reversed one).
/// A jump is a record iff it carries the path strictly above the running
/// supremum; the overshoot is then strictly positive.
pub fn record_stats(p: &JccpPath) -> RecordStats {
    let mut acc = Kahan::new(p.x0());
    let mut sup = p.x0();
    let mut out = RecordStats {
        times: Vec::new(),
        overshoots: Vec::new(),
        pre_gaps: Vec::new(),
        jump_sizes: Vec::new(),
        stopped: RecordStop::WindowEnd,
    };
    for j in p.jumps() {
        let pre = acc.value() - j.time;
        acc.add(j.size);
        let post = acc.value() - j.time;
        if post > sup {
            out.times.push(j.time);
            out.overshoots.push(post - sup);
            out.pre_gaps.push(sup - pre);
            out.jump_sizes.push(j.size);
            sup = post;
        }
    }
    out
}

/// Options for the streaming record scan from 0.
#[derive(Debug, Clone, Copy)]
pub struct RecordRunOpts {
    pub horizon: f64,
    /// Stop once the path is this far below its running supremum. `None`
    /// scans to the horizon (mandatory for critical measures, where records
    /// recur forever).
    pub depth_cut: Option<f64>,
}

impl RecordRunOpts {
    /// Default horizon of 10⁴ time units; subcritical measures get a depth
    /// cut at 45/γ where γ is the adjustment coefficient, making the
    /// probability of a missed record below e^{−45} per run.
    pub fn for_measure(measure: &LifespanMeasure) -> Self {
        Self {
            horizon: 1e4,
            depth_cut: adjustment_coefficient(measure).map(|g| 45.0 / g),
        }
    }
}

/// Streams the process from 0 and collects every record until the depth cut
/// or the horizon; avoids materializing the path.
pub fn record_run<R: Rng + ?Sized>(
    measure: &LifespanMeasure,
    opts: RecordRunOpts,
    rng: &mut R,
) -> RecordStats {
    let exp_b = Exp::new(measure.b()).expect("b > 0");
    let mut out = RecordStats {
        times: Vec::new(),
        overshoots: Vec::new(),
        pre_gaps: Vec::new(),
        jump_sizes: Vec::new(),
        stopped: RecordStop::Horizon,
    };
    let mut time = Kahan::new(0.0);
    let mut value = Kahan::new(0.0);
    let mut sup = 0.0f64;
    loop {
        let gap = exp_b.sample(rng);
        time.add(gap);
        if time.value() > opts.horizon {
            out.stopped = RecordStop::Horizon;
            return out;
        }
        value.add(-gap);
        let pre = value.value();
        let size = measure.sample_lifetime(rng);
        value.add(size);
        let post = value.value();
        if post > sup {
            out.times.push(time.value());
            out.overshoots.push(post - sup);
            out.pre_gaps.push(sup - pre);
            out.jump_sizes.push(size);
            sup = post;
        }
        if let Some(cut) = opts.depth_cut {
            if sup - post > cut {
                out.stopped = RecordStop::DepthCut;
                return out;
            }
        }
    }
}

/// Adjustment (Lundberg) coefficient: the positive root γ of
/// −γ + b(E[e^{γZ}] − 1) = 0, so that P(the path ever climbs d above its
/// current level) ≤ e^{−γd}. Exists iff the measure is subcritical and has
/// the necessary exponential moment; `None` otherwise (critical measures
/// have γ = 0).
pub fn adjustment_coefficient(measure: &LifespanMeasure) -> Option<f64> {
    if measure.is_critical() {
        return None;
    }
    let b = measure.b();
    let kappa = |g: f64| measure.exp_moment(g).map(|m| -g + b * (m - 1.0));
    // bracket the root: κ(0)=0, κ'(0)=m−1<0, κ convex
    let mut hi = 1.0;
    let mut lo = 0.0;
    for _ in 0..200 {
        match kappa(hi) {
            Some(v) if v > 0.0 => break,
            Some(_) => {
                lo = hi;
                hi *= 2.0;
            }
            None => {
                // stepped past the domain edge (exponential kind): shrink in
                hi = lo + (hi - lo) / 2.0;
                if hi - lo < 1e-12 {
                    return None;
                }
            }
        }
    }
    kappa(hi).filter(|&v| v > 0.0)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match kappa(mid) {
            Some(v) if v > 0.0 => hi = mid,
            Some(_) => lo = mid,
            None => hi = mid,
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::height_and_rho;
    use crate::mc::{chi_square_gof, ks_two_sample, seed_stream, Estimator};
    use crate::tree::{sample_tree, TreeCaps};

    fn exp_fixture() -> LifespanMeasure {
        LifespanMeasure::exponential(0.8, 1.0).unwrap()
    }

    #[test]
    fn zero_jump_path_is_linear() {
        // with no jumps before t, X_t = x − t
        let m = exp_fixture();
        let mut rng = seed_stream(20, 0);
        loop {
            let p = simulate_cpp(&m, 1.0, 100.0, &mut rng).unwrap();
            if p.jumps().is_empty() {
                assert_eq!(p.t0(), Some(1.0));
                assert!((p.value(0.5) - 0.5).abs() < 1e-15);
                return;
            }
        }
    }

    #[test]
    fn wald_identity_unkilled() {
        // E[X_t] − x = t(m−1)
        let m = exp_fixture();
        let (x, t) = (1.0, 5.0);
        let mut rng = seed_stream(21, 0);
        let mut est = Estimator::new();
        for _ in 0..100_000 {
            let p = simulate_levy_path(&m, x, t, &mut rng).unwrap();
            est.push(p.value(t));
        }
        let target = x + t * (m.m() - 1.0);
        assert!(
            est.z_against(target) < 3.0,
            "mean {} vs {target}",
            est.mean()
        );
    }

    #[test]
    fn contour_law_equals_cpp_law() {
        // (T0, #jumps, sup X) of tree contours match direct CPP paths
        let m = exp_fixture();
        let x = 1.0;
        let n = 10_000;
        let mut rng = seed_stream(22, 0);
        let mut t0_tree = Vec::new();
        let mut t0_cpp = Vec::new();
        let mut nj_tree = Vec::new();
        let mut nj_cpp = Vec::new();
        let mut sup_tree = Vec::new();
        let mut sup_cpp = Vec::new();
        for _ in 0..n {
            let tree = sample_tree(&m, x, TreeCaps::default(), &mut rng).unwrap();
            let p = crate::contour::jccp_from_tree(&tree).unwrap();
            t0_tree.push(p.end_time());
            nj_tree.push(p.jumps().len() as f64);
            sup_tree.push(p.sup(p.end_time()));
            let q = simulate_cpp(&m, x, 1e6, &mut rng).unwrap();
            assert!(q.hit_zero());
            t0_cpp.push(q.end_time());
            nj_cpp.push(q.jumps().len() as f64);
            sup_cpp.push(q.sup(q.end_time()));
        }
        for (name, a, b) in [
            ("T0", t0_tree, t0_cpp),
            ("jumps", nj_tree, nj_cpp),
            ("sup", sup_tree, sup_cpp),
        ] {
            let rep = ks_two_sample(name, a, b, 0.01, 22);
            assert!(rep.pass, "{}", rep.one_line());
        }
    }

    #[test]
    fn reversal_of_pure_drift() {
        // pure drift X_s = x − s reverses to X^{(t)}_s = −s
        let p = JccpPath::new(3.0, vec![], 3.0, true).unwrap();
        let r = time_reverse(&p, 2.0).unwrap();
        assert_eq!(r.x0(), 0.0);
        assert!(r.jumps().is_empty());
        assert!((r.value(1.5) - (-1.5)).abs() < 1e-15);
    }

    #[test]
    fn reversal_is_involution_on_increments() {
        let m = exp_fixture();
        let mut rng = seed_stream(23, 0);
        for _ in 0..200 {
            let p = simulate_levy_path(&m, 1.0, 10.0, &mut rng).unwrap();
            let t = 7.0;
            let r = time_reverse(&p, t).unwrap();
            let rr = time_reverse(&r, t).unwrap();
            // double reversal recovers the increments of the original path
            let orig: Vec<(f64, f64)> = p
                .jumps()
                .iter()
                .filter(|j| j.time < t)
                .map(|j| (j.time, j.size))
                .collect();
            let back: Vec<(f64, f64)> = rr.jumps().iter().map(|j| (j.time, j.size)).collect();
            assert_eq!(orig.len(), back.len());
            for (a, b) in orig.iter().zip(&back) {
                assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-12);
            }
            for s in [0.0, 1.3, 4.2, 6.9] {
                assert!(((rr.value(s) - rr.x0()) - (p.value(s) - p.x0())).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reversed_records_equal_forward_height() {
        // pathwise: R_t of the reversed path = H_t, and the overshoots are
        // the ρ_i^t in reverse order; sup X^{(t)} = X_t − I_t
        let m = exp_fixture();
        let mut rng = seed_stream(24, 0);
        for _ in 0..2000 {
            let p = simulate_cpp(&m, 1.0, 50.0, &mut rng).unwrap();
            let t = 0.999 * p.end_time() * rand::Rng::random::<f64>(&mut rng);
            if t <= 0.0 {
                continue;
            }
            let rho = height_and_rho(&p, t).unwrap();
            let rev = time_reverse(&p, t).unwrap();
            let rec = record_stats(&rev);
            assert_eq!(rec.count(), rho.height() as usize, "record count vs height");
            for (i, &ov) in rec.overshoots.iter().enumerate() {
                let rho_i = rho.masses[rho.masses.len() - 1 - i];
                assert!((ov - rho_i).abs() < 1e-9, "overshoot {ov} vs mass {rho_i}");
            }
            let sup_rev = rev.sup(rev.end_time());
            assert!((sup_rev - (p.value(t) - p.inf(t))).abs() < 1e-9);
        }
    }

    #[test]
    fn adjustment_coefficient_closed_forms() {
        // Exponential(θ), rate b: γ = θ − b
        let g = adjustment_coefficient(&exp_fixture()).unwrap();
        assert!((g - 0.2).abs() < 1e-9, "γ={g}");
        // PointMass(1), b=0.5: 0.5(e^γ − 1) = γ  ⇒ γ ≈ 1.25643
        let m = LifespanMeasure::point_mass(0.5, 1.0).unwrap();
        let g = adjustment_coefficient(&m).unwrap();
        assert!((0.5 * (g.exp() - 1.0) - g).abs() < 1e-9, "γ={g}");
        // critical: none
        assert!(adjustment_coefficient(&LifespanMeasure::point_mass(1.0, 1.0).unwrap()).is_none());
    }

    #[test]
    fn first_record_laws() {
        // E[e^{−λρ̃₁}; T̃₁<∞] = 1 − ψ(λ)/λ (= 0.4 at λ=1 for the fixture),
        // E[ρ̃₁e^{−λρ̃₁}; T̃₁<∞] = ψ'(λ)/λ − ψ(λ)/λ², P(T̃₁<∞) = m
        let m = exp_fixture();
        let opts = RecordRunOpts::for_measure(&m);
        let lambda = 1.0;
        let mut rng = seed_stream(25, 0);
        let mut e_exp = Estimator::new();
        let mut e_wexp = Estimator::new();
        let mut e_rec = Estimator::new();
        for _ in 0..40_000 {
            let rec = record_run(&m, opts, &mut rng);
            assert_eq!(rec.stopped, RecordStop::DepthCut);
            match rec.overshoots.first() {
                Some(&r1) => {
                    e_exp.push((-lambda * r1).exp());
                    e_wexp.push(r1 * (-lambda * r1).exp());
                    e_rec.push(1.0);
                }
                None => {
                    e_exp.push(0.0);
                    e_wexp.push(0.0);
                    e_rec.push(0.0);
                }
            }
        }
        let psi = m.psi(lambda).unwrap();
        let psi_p = m.psi_prime(lambda).unwrap();
        let t1 = 1.0 - psi / lambda;
        assert!((t1 - 0.4).abs() < 1e-12);
        assert!(e_exp.z_against(t1) < 3.5, "{} vs {t1}", e_exp.mean());
        let t2 = psi_p / lambda - psi / (lambda * lambda);
        assert!(e_wexp.z_against(t2) < 3.5, "{} vs {t2}", e_wexp.mean());
        assert!(e_rec.z_against(m.m()) < 3.5, "{} vs m", e_rec.mean());
    }

    #[test]
    fn total_records_geometric() {
        let m = exp_fixture();
        let opts = RecordRunOpts::for_measure(&m);
        let mut rng = seed_stream(26, 0);
        let kmax = 40usize;
        let mut counts = vec![0u64; kmax + 1];
        for _ in 0..40_000 {
            let rec = record_run(&m, opts, &mut rng);
            counts[rec.count().min(kmax)] += 1;
        }
        let mm = m.m();
        let mut probs: Vec<f64> = (0..kmax).map(|k| mm.powi(k as i32) * (1.0 - mm)).collect();
        probs.push(1.0 - probs.iter().sum::<f64>());
        let rep = chi_square_gof("R_inf geometric", &counts, &probs, 0.01, 26);
        assert!(rep.pass, "{}", rep.one_line());
    }

    #[test]
    fn record_increments_iid() {
        // (ρ̃_i, T̃_i − T̃_{i−1}) i.i.d. across i: compare i=1 vs i=2 marginals
        let m = exp_fixture();
        let opts = RecordRunOpts::for_measure(&m);
        let mut rng = seed_stream(27, 0);
        let mut ov1 = Vec::new();
        let mut ov2 = Vec::new();
        let mut gap1 = Vec::new();
        let mut gap2 = Vec::new();
        for _ in 0..60_000 {
            let rec = record_run(&m, opts, &mut rng);
            if rec.count() >= 1 {
                ov1.push(rec.overshoots[0]);
                gap1.push(rec.times[0]);
            }
            if rec.count() >= 2 {
                ov2.push(rec.overshoots[1]);
                gap2.push(rec.times[1] - rec.times[0]);
            }
        }
        let rep = ks_two_sample("overshoot i=1 vs i=2", ov1, ov2, 0.01, 27);
        assert!(rep.pass, "{}", rep.one_line());
        let rep = ks_two_sample("record gap i=1 vs i=2", gap1, gap2, 0.01, 27);
        assert!(rep.pass, "{}", rep.one_line());
    }

    #[test]
    fn first_record_joint_law_2d() {
        // joint law of (overshoot x, jump size y) at the first record is
        // Λ(dy) 1_{0<x<y} dx / m; for Exponential(1), b=0.8 the normalized
        // density is e^{−y} on {0 < x < y}
        let m = exp_fixture();
        let opts = RecordRunOpts::for_measure(&m);
        let mut rng = seed_stream(28, 0);
        let x_edges = [0.0, 0.3, 0.7, 1.2, f64::INFINITY];
        let y_edges = [0.0, 0.6, 1.1, 2.0, f64::INFINITY];
        let mut counts = vec![0u64; (x_edges.len() - 1) * (y_edges.len() - 1)];
        let mut n_rec = 0u64;
        for _ in 0..60_000 {
            let rec = record_run(&m, opts, &mut rng);
            if rec.count() >= 1 {
                let (x, y) = (rec.overshoots[0], rec.jump_sizes[0]);
                let i = x_edges.iter().rposition(|&e| x >= e).unwrap();
                let j = y_edges.iter().rposition(|&e| y >= e).unwrap();
                counts[i * (y_edges.len() - 1) + j] += 1;
                n_rec += 1;
            }
        }
        // cell probabilities by 1-D quadrature in y of e^{−y}·overlap(x-cell, [0,y])
        let mut probs = vec![0.0; counts.len()];
        let quad = |x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64| {
            let y_hi = y_hi.min(60.0);
            let n = 20_000;
            let h = (y_hi - y_lo) / n as f64;
            let f = |y: f64| (-y).exp() * ((x_hi.min(y) - x_lo.min(y)).max(0.0));
            let mut acc = (f(y_lo) + f(y_hi)) / 2.0;
            for k in 1..n {
                acc += f(y_lo + k as f64 * h);
            }
            acc * h
        };
        for i in 0..x_edges.len() - 1 {
            for j in 0..y_edges.len() - 1 {
                probs[i * (y_edges.len() - 1) + j] =
                    quad(x_edges[i], x_edges[i + 1], y_edges[j], y_edges[j + 1]);
            }
        }
        let total: f64 = probs.iter().sum();
        assert!(
            (total - 1.0).abs() < 1e-3,
            "quadrature normalization {total}"
        );
        for p in &mut probs {
            *p /= total;
        }
        let rep = chi_square_gof("first record joint 2d", &counts, &probs, 0.01, 28);
        assert!(rep.pass, "{} (n_rec={n_rec})", rep.one_line());
    }

    #[test]
    fn critical_absorption_fraction_reported() {
        // critical case: T0 is finite a.s. but heavy-tailed; at the default
        // horizon the unabsorbed fraction stays small and is reported
        let m = LifespanMeasure::point_mass(1.0, 1.0).unwrap();
        let mut rng = seed_stream(30, 0);
        let n = 2_000;
        let unabsorbed = (0..n)
            .filter(|_| !simulate_cpp(&m, 1.0, 1e4, &mut rng).unwrap().hit_zero())
            .count();
        let frac = unabsorbed as f64 / n as f64;
        println!("critical unabsorbed fraction at horizon 1e4: {frac}");
        assert!(frac < 0.05, "tail too heavy: {frac}");
    }

    #[test]
    fn absorption_diagnostics() {
        // T0 < horizon for essentially all subcritical paths at x=1
        let m = exp_fixture();
        let mut rng = seed_stream(29, 0);
        let mut absorbed = 0;
        let n = 10_000;
        for _ in 0..n {
            if simulate_cpp(&m, 1.0, 1e4, &mut rng).unwrap().hit_zero() {
                absorbed += 1;
            }
        }
        assert_eq!(absorbed, n, "horizon 1e4 should absorb everything at m=0.8");
    }
}
