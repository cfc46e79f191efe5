//! The jumping chronological contour process (JCCP) of a splitting tree, the
//! tree ↔ path bijection, and the height/record machinery.
//!
//! A JCCP is a càdlàg piecewise-linear path with slope −1 and positive jumps.
//! For a finite tree the contour starts at the ancestor's death level, visits
//! every point of the tree exactly once (children youngest-first), jumps by
//! the lifetime of each child it meets, and ends at 0 at a time equal to the
//! total tree length. The height `H_t` of the path — the number of times
//! `s ≤ t` with `X_{s−} < inf_{[s,t]} X` — is exactly the generation of the
//! individual being visited at time `t`, and the jumps of the future-infimum
//! function together with the past infimum form the record measure
//! `(ρ_0^t, …, ρ_{H_t}^t)` whose total mass is `X_t`.

use crate::error::{Error, Result};
use crate::model::LifespanMeasure;
use crate::tree::ChronologicalTree;

/// Neumaier-compensated accumulator: keeps long prefix sums of path lengths
/// accurate to O(ε·Σ|x|) instead of O(n·ε·Σ|x|).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn new(x: f64) -> Self {
        Self { sum: x, c: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// One positive jump of a JCCP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// Càdlàg slope −1 path with positive jumps:
/// `X_t = x0 − t + Σ_{tᵢ ≤ t} rᵢ` on `[0, end_time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JccpPath {
    x0: f64,
    jumps: Vec<Jump>,
    end_time: f64,
    /// When set, `end_time` is the hitting time of 0 and the path is killed
    /// there; otherwise the path was truncated at a horizon.
    hit_zero: bool,
}

impl JccpPath {
    pub fn new(x0: f64, jumps: Vec<Jump>, end_time: f64, hit_zero: bool) -> Result<Self> {
        if !x0.is_finite() || !end_time.is_finite() || end_time < 0.0 {
            return Err(Error::BadPath("non-finite start or end".into()));
        }
        let mut prev = 0.0;
        for j in &jumps {
            if !(j.time > prev) || j.time > end_time {
                return Err(Error::BadPath(format!(
                    "jump times must be strictly increasing in (0, end]; got {}",
                    j.time
                )));
            }
            if !(j.size > 0.0) || !j.size.is_finite() {
                return Err(Error::BadPath(format!(
                    "jump sizes must be positive; got {}",
                    j.size
                )));
            }
            prev = j.time;
        }
        let path = Self {
            x0,
            jumps,
            end_time,
            hit_zero,
        };
        if hit_zero {
            let terminal = path.value(end_time);
            if terminal.abs() > 1e-9 * (1.0 + x0.abs()) {
                return Err(Error::BadPath(format!(
                    "killed path must end at 0, ends at {terminal}"
                )));
            }
        }
        Ok(path)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn hit_zero(&self) -> bool {
        self.hit_zero
    }

    /// T0 when the path was killed at 0.
    pub fn t0(&self) -> Option<f64> {
        self.hit_zero.then_some(self.end_time)
    }

    /// X_t (càdlàg: a jump at exactly `t` is included).
    pub fn value(&self, t: f64) -> f64 {
        let mut acc = Kahan::new(self.x0);
        for j in &self.jumps {
            if j.time > t {
                break;
            }
            acc.add(j.size);
        }
        acc.add(-t);
        acc.value()
    }

    /// Left limit X_{t−}, with the convention X_{0−} = X_0.
    pub fn pre_value(&self, t: f64) -> f64 {
        let mut acc = Kahan::new(self.x0);
        for j in &self.jumps {
            if j.time >= t {
                break;
            }
            acc.add(j.size);
        }
        acc.add(-t);
        acc.value()
    }

    /// Running supremum over [0, t].
    pub fn sup(&self, t: f64) -> f64 {
        let mut acc = Kahan::new(self.x0);
        let mut sup = self.x0;
        for j in &self.jumps {
            if j.time > t {
                break;
            }
            acc.add(j.size);
            sup = sup.max(acc.value() - j.time);
        }
        sup
    }

    /// Running infimum over [0, t]. Between jumps the path decreases, so the
    /// infimum is attained at a pre-jump value or at t itself.
    pub fn inf(&self, t: f64) -> f64 {
        let mut acc = Kahan::new(self.x0);
        let mut inf = f64::INFINITY;
        for j in &self.jumps {
            if j.time > t {
                break;
            }
            inf = inf.min(acc.value() - j.time);
            acc.add(j.size);
        }
        inf.min(acc.value() - t)
    }
}

/// The finite record measure (ρ_0^t, …, ρ_{H_t}^t) at evaluation time `t`:
/// ρ_0 is the past infimum and ρ_i the i-th jump of the future-infimum
/// function s ↦ inf_{[s,t]} X. An empty mass vector encodes the measure
/// killed at T0.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoMeasure {
    pub t: f64,
    pub masses: Vec<f64>,
}

impl RhoMeasure {
    /// The killed (zero) measure.
    pub fn dead(t: f64) -> Self {
        Self {
            t,
            masses: Vec::new(),
        }
    }

    pub fn is_dead(&self) -> bool {
        self.masses.is_empty()
    }

    /// Height H_t = number of future-infimum records.
    pub fn height(&self) -> u32 {
        self.masses.len().saturating_sub(1) as u32
    }

    /// Σ ρ_i = X_t.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Σ ρ_i m^{−i}.
    pub fn weighted_mass(&self, m: f64) -> f64 {
        let mut w = 1.0;
        let mut acc = 0.0;
        for &rho in &self.masses {
            acc += rho * w;
            w /= m;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Tree -> path
// ---------------------------------------------------------------------------

/// Visit intervals of the contour: which individual the contour is tracing
/// during each linear segment.
#[derive(Debug, Clone)]
pub struct VisitSchedule {
    /// (start time, end time, node) with starts strictly increasing.
    segments: Vec<(f64, f64, usize)>,
}

impl VisitSchedule {
    /// Individual visited at time `t` (càdlàg: at a jump the child's visit
    /// has begun).
    pub fn node_at(&self, t: f64) -> Option<usize> {
        if self.segments.is_empty() {
            return None;
        }
        let i = self.segments.partition_point(|&(s, _, _)| s <= t);
        if i == 0 {
            return None;
        }
        let (_, end, node) = self.segments[i - 1];
        (t <= end).then_some(node)
    }
}

/// Contour of a finite untruncated tree, together with its visit schedule.
pub fn jccp_with_schedule(tree: &ChronologicalTree) -> Result<(JccpPath, VisitSchedule)> {
    if tree.is_truncated() {
        return Err(Error::Truncated(
            "the contour of a truncated tree is undefined".into(),
        ));
    }
    struct Frame {
        node: usize,
        visited_children: usize,
    }
    let mut jumps = Vec::new();
    let mut segments = Vec::new();
    let mut time = Kahan::new(0.0);
    let mut level = tree.death(0);
    let mut stack = vec![Frame {
        node: 0,
        visited_children: 0,
    }];
    while let Some(frame) = stack.last_mut() {
        let v = frame.node;
        let children = tree.children(v); // ascending birth level
        if frame.visited_children < children.len() {
            // next child in youngest-first (descending birth) order
            let c = children[children.len() - 1 - frame.visited_children];
            frame.visited_children += 1;
            let t0 = time.value();
            time.add(level - tree.birth(c));
            segments.push((t0, time.value(), v));
            jumps.push(Jump {
                time: time.value(),
                size: tree.lifetime(c),
            });
            level = tree.death(c);
            stack.push(Frame {
                node: c,
                visited_children: 0,
            });
        } else {
            let t0 = time.value();
            time.add(level - tree.birth(v));
            segments.push((t0, time.value(), v));
            level = tree.birth(v);
            stack.pop();
        }
    }
    segments.retain(|&(a, b, _)| b > a);
    let path = JccpPath::new(tree.death(0), jumps, time.value(), true)?;
    Ok((path, VisitSchedule { segments }))
}

/// Depth-first contour of a finite untruncated tree: starts at the
/// ancestor's death level, jumps by ζ(w) at each birth encounter
/// (youngest child first), and ends at 0 at time Σ_v ζ(v).
pub fn jccp_from_tree(tree: &ChronologicalTree) -> Result<JccpPath> {
    jccp_with_schedule(tree).map(|(p, _)| p)
}

// ---------------------------------------------------------------------------
// Path -> tree
// ---------------------------------------------------------------------------

/// Recovers the splitting tree from its contour; inverse of
/// [`jccp_from_tree`]. The path must start positive and be killed at 0.
pub fn tree_from_path(p: &JccpPath) -> Result<ChronologicalTree> {
    if !(p.x0() > 0.0) {
        return Err(Error::BadPath(format!(
            "contour must start above 0, got {}",
            p.x0()
        )));
    }
    if !p.hit_zero() {
        return Err(Error::BadPath(
            "contour must reach 0 (killed path required)".into(),
        ));
    }
    // entries in discovery order: parents precede children
    let mut entries: Vec<(Option<usize>, f64, f64)> = vec![(None, 0.0, p.x0())];
    let mut stack: Vec<usize> = vec![0];
    let mut sizes = Kahan::new(p.x0());
    for j in p.jumps() {
        sizes.add(-j.time);
        let v = sizes.value(); // X_{t−} at this jump
        sizes.add(j.time);
        // visits of everyone born at or above the current level have ended
        while let Some(&top) = stack.last() {
            if v <= entries[top].1 {
                stack.pop();
            } else {
                break;
            }
        }
        let parent = *stack
            .last()
            .ok_or_else(|| Error::BadPath(format!("jump at level {v} below the root's birth")))?;
        entries.push((Some(parent), v, v + j.size));
        stack.push(entries.len() - 1);
        sizes.add(j.size);
    }
    ChronologicalTree::from_levels(&entries)
}

// ---------------------------------------------------------------------------
// Height and record measure
// ---------------------------------------------------------------------------

/// Record times and masses at time `t < T0`: a backward sweep over the jump
/// skeleton maintaining the running future infimum. Exact in O(#jumps); the
/// future infimum is piecewise linear with breakpoints only at jump times.
///
/// A jump time `s` is a record iff `X_{s−} < inf_{[s,t]} X` strictly; ties
/// are not records. With the convention X_{0−} = X_0, s = 0 is never a
/// record and ρ_0 is the separate past-infimum mass.
pub fn height_and_rho(p: &JccpPath, t: f64) -> Result<RhoMeasure> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!("t={t} must be non-negative")));
    }
    if p.hit_zero() && t >= p.end_time() {
        return Err(Error::Domain(format!(
            "t={t} >= T0={}: the record measure is killed at T0",
            p.end_time()
        )));
    }
    if t > p.end_time() {
        return Err(Error::Domain(format!(
            "t={t} beyond the simulated window {}",
            p.end_time()
        )));
    }
    // pre-jump values of all jumps with time <= t, by compensated prefix sums
    let mut acc = Kahan::new(p.x0());
    let mut pre: Vec<f64> = Vec::new();
    for j in p.jumps() {
        if j.time > t {
            break;
        }
        pre.push(acc.value() - j.time);
        acc.add(j.size);
    }
    let x_t = acc.value() - t;
    // backward sweep: future_inf over [s, t] as s passes each jump
    let mut future_inf = x_t;
    let mut masses_rev: Vec<f64> = Vec::new();
    for &v in pre.iter().rev() {
        if v < future_inf {
            masses_rev.push(future_inf - v);
            future_inf = v;
        } else {
            future_inf = future_inf.min(v);
        }
    }
    let mut masses = vec![future_inf]; // ρ_0 = inf over [0, t]
    masses.extend(masses_rev.iter().rev());
    Ok(RhoMeasure { t, masses })
}

/// The height-weighted martingale value M_{t∧T0} = Σ_i ρ_i^{t∧T0} m^{−i};
/// for t ≥ T0 every mass is dead and the stopped value is 0.
pub fn martingale_m(p: &JccpPath, t: f64, m: f64) -> Result<f64> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::Domain(format!("m={m} must lie in (0, 1]")));
    }
    if p.hit_zero() && t >= p.end_time() {
        return Ok(0.0);
    }
    Ok(height_and_rho(p, t)?.weighted_mass(m))
}

/// Evaluates the generator of the stopped record-measure process on the
/// weight function g(ν) = Σ νᵢ m^{−i}: the jump compensation adds mass at
/// height H+1 at rate Λ while the drift erodes the top mass, leaving
/// ∫rΛ(dr)·m^{−H−1} − m^{−H}. Zero (up to floating error) exactly when `m`
/// is the measure's own mean — exposed as a self-check.
pub fn generator_residual(measure: &LifespanMeasure, nu: &RhoMeasure, m: f64) -> f64 {
    if nu.is_dead() {
        return 0.0;
    }
    let h = nu.height() as i32;
    measure.m() * m.powi(-h - 1) - m.powi(-h)
}
