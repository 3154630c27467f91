//! Accelerated projected gradient ascent for FAS positions and relaxed ADC
//! bit depths, with a quadratic QoS penalty and Armijo backtracking.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ChannelModel, ChannelSet, FasPositions, FasRegion};
use crate::metrics::{row_dot, spectral_efficiency, Combiners, LinkParams, PowerModel};
use crate::quantization::{analytic_zeta, analytic_zeta_derivative};

/// A differentiable objective to be maximized.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Feasible-set projection.
pub trait Projection {
    fn project(&self, x: &[f64]) -> Vec<f64>;
    /// Projection used for extrapolated points, which need not be integral.
    fn relax(&self, x: &[f64]) -> Vec<f64> {
        self.project(x)
    }
}

/// Per-coordinate clamp to the movement regions of the users.
#[derive(Debug, Clone)]
pub struct RegionProjection(pub Vec<FasRegion>);

impl Projection for RegionProjection {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        project_region(x, &self.0)
    }
}

/// Clamp each `(x, y)` pair into its user's region.
pub fn project_region(u: &[f64], regions: &[FasRegion]) -> Vec<f64> {
    u.chunks(2)
        .zip(regions)
        .flat_map(|(p, r)| [p[0].clamp(r.min, r.max), p[1].clamp(r.min, r.max)])
        .collect()
}

/// Clamp to `[b_min, b_max]` and round half away from zero.
#[derive(Debug, Clone, Copy)]
pub struct BitProjection {
    pub b_min: u32,
    pub b_max: u32,
}

impl Projection for BitProjection {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        project_bits(x, self.b_min, self.b_max)
    }

    fn relax(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|b| b.clamp(self.b_min as f64, self.b_max as f64)).collect()
    }
}

pub fn project_bits(b: &[f64], b_min: u32, b_max: u32) -> Vec<f64> {
    let (lo, hi) = (b_min as f64, b_max as f64);
    b.iter()
        .map(|&x| {
            if x <= lo {
                lo
            } else if x >= hi {
                hi
            } else {
                x.round()
            }
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    /// Shrink factor.
    pub shrink: f64,
    /// Sufficient-increase constant.
    pub sufficient: f64,
    pub max_shrinks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, sufficient: 1e-4, max_shrinks: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub alpha: f64,
    pub point: Vec<f64>,
    pub value: f64,
    pub stalled: bool,
}

/// Backtracking from `x` along `grad`: the largest `alpha * shrink^j` whose
/// projected point satisfies `f(x+) >= f(x) + sufficient * alpha * |x+ - x|`.
pub fn backtracking_step<O: Objective + ?Sized, P: Projection + ?Sized>(
    objective: &O,
    projection: &P,
    x: &[f64],
    fx: f64,
    grad: &[f64],
    alpha0: f64,
    ls: &LineSearch,
) -> StepResult {
    let mut alpha = alpha0;
    for _ in 0..=ls.max_shrinks {
        let trial: Vec<f64> = x.iter().zip(grad).map(|(a, g)| a + alpha * g).collect();
        let point = projection.project(&trial);
        let value = objective.value(&point);
        if value >= fx + ls.sufficient * alpha * distance(&point, x) {
            return StepResult { alpha, point, value, stalled: false };
        }
        alpha *= ls.shrink;
    }
    StepResult { alpha: 0.0, point: x.to_vec(), value: fx, stalled: true }
}

/// Momentum update `t' = (1 + sqrt(4 t^2 + 1)) / 2`.
pub fn next_momentum(t: f64) -> f64 {
    0.5 * (1.0 + (4.0 * t * t + 1.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApgaConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub line_search: LineSearch,
}

impl Default for ApgaConfig {
    fn default() -> Self {
        Self { tolerance: 1e-5, max_iterations: 100, line_search: LineSearch::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgaOutcome {
    pub x: Vec<f64>,
    /// Objective at the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
}

/// Objective of one APGA iteration, allowed to depend on the current iterate
/// (the bit problem re-anchors its Dinkelbach parameter every iteration).
pub trait IterationObjective {
    type Inner: Objective;
    fn at(&self, anchor: &[f64]) -> Self::Inner;
    /// Value recorded in the trace for an accepted iterate.
    fn score(&self, x: &[f64]) -> f64;
}

/// Generic accelerated projected gradient ascent with best-of-two
/// selection and rejection of non-improving candidates.
pub fn apga<I: IterationObjective, P: Projection>(
    problem: &I,
    projection: &P,
    x0: &[f64],
    alpha0: impl Fn(&[f64]) -> f64,
    cfg: &ApgaConfig,
) -> ApgaOutcome {
    let mut x = projection.project(x0);
    let mut x_prev = x.clone();
    let mut z = x.clone();
    let (mut t_prev, mut t) = (1.0, 1.0);
    let mut score = problem.score(&x);
    let mut trace = vec![score];
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let f = problem.at(&x);
        let y_raw: Vec<f64> = (0..x.len())
            .map(|i| x[i] + t_prev / t * (z[i] - x[i]) + (t_prev - 1.0) / t * (x[i] - x_prev[i]))
            .collect();
        let y = projection.relax(&y_raw);

        let fy = f.value(&y);
        let gy = f.gradient(&y);
        let from_y = backtracking_step(&f, projection, &y, fy, &gy, alpha0(&gy), &cfg.line_search);
        let fx = f.value(&x);
        let gx = f.gradient(&x);
        let from_x = backtracking_step(&f, projection, &x, fx, &gx, alpha0(&gx), &cfg.line_search);
        stalled = from_y.stalled && from_x.stalled;
        z = from_y.point.clone();

        let best = if from_y.value >= from_x.value { from_y } else { from_x };
        x_prev = x.clone();
        if best.value > fx {
            x = best.point;
        }
        t_prev = t;
        t = next_momentum(t);

        let next = problem.score(&x);
        let delta = next - score;
        score = next;
        trace.push(score);
        if stalled || delta.abs() <= cfg.tolerance {
            converged = !stalled;
            break;
        }
    }
    ApgaOutcome { x, trace, iterations, converged, stalled }
}

/// `g_k = (2^S_min - 1) B_k - A_k`; non-positive exactly when `SE_k >= S_min`.
pub fn qos_gap(a: f64, b: f64, s_min: f64) -> f64 {
    (s_min.exp2() - 1.0) * b - a
}

/// `[max(0, g)]^2`.
pub fn qos_loss(gap: f64) -> f64 {
    gap.max(0.0).powi(2)
}

/// Sum SE, penalty and their parts at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedValue {
    pub sum_se: f64,
    pub penalty: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PenalizedValue {
    pub fn violated(&self) -> bool {
        self.penalty > 0.0
    }
}

/// `A_k`, `B_k`, SE and penalty together with their derivatives with respect
/// to one scalar, accumulated into the gradient of `sum SE - xi * penalty`.
fn accumulate_user(
    a: f64,
    b: f64,
    da: f64,
    db: f64,
    s_min: f64,
    xi: f64,
) -> f64 {
    let mut g = 0.0;
    if b > 0.0 && a + b > 0.0 {
        g += (b * da - a * db) / (b * (a + b) * LN_2);
    }
    let gap = qos_gap(a, b, s_min);
    if gap > 0.0 {
        let tau = s_min.exp2() - 1.0;
        g -= xi * 2.0 * gap * (tau * db - da);
    }
    g
}

/// State held fixed during position and bit optimization.
#[derive(Debug, Clone, Copy)]
pub struct FixedState<'a> {
    pub eta: &'a [f64],
    pub combiners: &'a Combiners,
    pub params: LinkParams,
    pub s_min: f64,
    pub xi: f64,
}

/// `A_k`, `B_k` and the penalty, with `|c_kj|^2` taken from `gains`.
fn penalized_value(
    channels: &ChannelSet,
    zeta: &[f64],
    gains: &[Complex64],
    st: &FixedState<'_>,
) -> PenalizedValue {
    let kk = channels.num_users;
    let p = st.params.p_u;
    let mut a = vec![0.0; kk];
    let mut b = vec![0.0; kk];
    for k in 0..kk {
        a[k] = p * st.eta[k] * gains[k * kk + k].norm_sqr();
        b[k] = (0..kk).filter(|&j| j != k).map(|j| p * st.eta[j] * gains[k * kk + j].norm_sqr()).sum();
    }
    for (m, &z) in zeta.iter().enumerate() {
        let rx = received_power(channels, m, st);
        for k in 0..kk {
            let v = st.combiners.v(m, k);
            b[k] += st.params.noise * z * z * v.norm_squared();
            b[k] += z * (1.0 - z) * v.iter().zip(&rx).map(|(x, r)| x.norm_sqr() * r).sum::<f64>();
        }
    }
    let sum_se = a.iter().zip(&b).map(|(&x, &y)| spectral_efficiency(if y > 0.0 { x / y } else { 0.0 })).sum();
    let penalty = a.iter().zip(&b).map(|(&x, &y)| qos_loss(qos_gap(x, y, st.s_min))).sum();
    PenalizedValue { sum_se, penalty, a, b }
}

/// Diagonal of `sum_j p eta_j h_mj h_mj^H + sigma^2 I`.
fn received_power(channels: &ChannelSet, m: usize, st: &FixedState<'_>) -> Vec<f64> {
    let mut d = vec![st.params.noise; channels.antennas];
    for j in 0..channels.num_users {
        let w = st.params.p_u * st.eta[j];
        for (x, h) in d.iter_mut().zip(channels.h(m, j).iter()) {
            *x += w * h.norm_sqr();
        }
    }
    d
}

fn gains(channels: &ChannelSet, zeta: &[f64], combiners: &Combiners) -> Vec<Complex64> {
    crate::metrics::effective_gains(channels, zeta, combiners)
}

/// `f(u) = sum SE(u) - xi * sum psi_k(u)` with combiners, powers and bits fixed.
#[derive(Debug, Clone, Copy)]
pub struct PositionProblem<'a> {
    pub model: &'a ChannelModel,
    pub zeta: &'a [f64],
    pub state: FixedState<'a>,
}

impl PositionProblem<'_> {
    fn channels(&self, u: &[f64]) -> ChannelSet {
        self.model.channels_unchecked(&FasPositions::from_flat(u))
    }

    pub fn evaluate(&self, u: &[f64]) -> PenalizedValue {
        let ch = self.channels(u);
        penalized_value(&ch, self.zeta, &gains(&ch, self.zeta, self.state.combiners), &self.state)
    }
}

impl Objective for PositionProblem<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let v = self.evaluate(u);
        v.sum_se - self.state.xi * v.penalty
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        grad_u(self, u)
    }
}

impl IterationObjective for PositionProblem<'_> {
    type Inner = Self;

    fn at(&self, _anchor: &[f64]) -> Self {
        *self
    }

    fn score(&self, u: &[f64]) -> f64 {
        self.value(u)
    }
}

/// Gradient of the penalized position objective, laid out `[x_0, y_0, x_1, ...]`.
pub fn grad_u(problem: &PositionProblem<'_>, u: &[f64]) -> Vec<f64> {
    let model = problem.model;
    let st = &problem.state;
    let (mm, kk) = (model.num_aps, model.num_users);
    let pos = FasPositions::from_flat(u);
    let ch = model.channels_unchecked(&pos);
    let c = gains(&ch, problem.zeta, st.combiners);
    let value = penalized_value(&ch, problem.zeta, &c, st);
    let p = st.params.p_u;

    // dh_mj/du_j, indexed m * K + j, for both axes.
    let dh: Vec<_> = (0..mm)
        .flat_map(|m| (0..kk).map(move |j| (m, j)))
        .map(|(m, j)| model.channel_gradient(m, j, pos.0[j]))
        .collect();

    let mut grad = vec![0.0; 2 * kk];
    for j in 0..kk {
        for axis in 0..2 {
            let d = |m: usize| if axis == 0 { &dh[m * kk + j].0 } else { &dh[m * kk + j].1 };
            let mut g = 0.0;
            for k in 0..kk {
                // d c_kj / d u_j
                let dc: Complex64 = (0..mm).map(|m| row_dot(st.combiners.v(m, k), d(m)) * problem.zeta[m]).sum();
                let dgain = 2.0 * (c[k * kk + j].conj() * dc).re;
                let da = if k == j { p * st.eta[k] * dgain } else { 0.0 };
                let mut db = if k == j { 0.0 } else { p * st.eta[j] * dgain };
                for m in 0..mm {
                    let z = problem.zeta[m];
                    let q = z * (1.0 - z);
                    if q == 0.0 {
                        continue;
                    }
                    let h = ch.h(m, j);
                    let s: f64 = st
                        .combiners
                        .v(m, k)
                        .iter()
                        .zip(h.iter().zip(d(m).iter()))
                        .map(|(v, (hn, dn))| v.norm_sqr() * 2.0 * (hn.conj() * dn).re)
                        .sum();
                    db += q * p * st.eta[j] * s;
                }
                g += accumulate_user(value.a[k], value.b[k], da, db, st.s_min, st.xi);
            }
            grad[2 * j + axis] = g;
        }
    }
    grad
}

/// `f(b) = sum SE(b) - theta * P_bar(b) - xi * sum psi_k(b)` with analytic
/// distortion factors; positions, powers and combiners fixed.
#[derive(Debug, Clone, Copy)]
pub struct BitProblem<'a> {
    pub channels: &'a ChannelSet,
    pub power: &'a PowerModel,
    pub state: FixedState<'a>,
    pub theta: f64,
}

impl BitProblem<'_> {
    pub fn evaluate(&self, b: &[f64]) -> PenalizedValue {
        let zeta: Vec<f64> = b.iter().map(|&x| analytic_zeta(x)).collect();
        penalized_value(self.channels, &zeta, &gains(self.channels, &zeta, self.state.combiners), &self.state)
    }

    pub fn traffic_free_power(&self, b: &[f64]) -> f64 {
        self.power.traffic_free_power(self.state.eta, b, self.channels.antennas, self.state.params.p_u)
    }

    /// Penalized Dinkelbach ratio `(sum SE - xi * penalty) / P_bar`.
    pub fn ratio(&self, b: &[f64]) -> f64 {
        let v = self.evaluate(b);
        (v.sum_se - self.state.xi * v.penalty) / self.traffic_free_power(b)
    }
}

impl Objective for BitProblem<'_> {
    fn value(&self, b: &[f64]) -> f64 {
        let v = self.evaluate(b);
        v.sum_se - self.theta * self.traffic_free_power(b) - self.state.xi * v.penalty
    }

    fn gradient(&self, b: &[f64]) -> Vec<f64> {
        grad_b(self, b)
    }
}

impl<'a> IterationObjective for BitProblem<'a> {
    type Inner = BitProblem<'a>;

    fn at(&self, anchor: &[f64]) -> BitProblem<'a> {
        BitProblem { theta: self.ratio(anchor), ..*self }
    }

    fn score(&self, b: &[f64]) -> f64 {
        self.ratio(b)
    }
}

/// Gradient of the penalized bit objective with respect to each AP's depth.
pub fn grad_b(problem: &BitProblem<'_>, b: &[f64]) -> Vec<f64> {
    let ch = problem.channels;
    let st = &problem.state;
    let (mm, kk) = (ch.num_aps, ch.num_users);
    let zeta: Vec<f64> = b.iter().map(|&x| analytic_zeta(x)).collect();
    let c = gains(ch, &zeta, st.combiners);
    let value = penalized_value(ch, &zeta, &c, st);
    let p = st.params.p_u;
    let n = ch.antennas;
    (0..mm)
        .map(|m| {
            let z = zeta[m];
            let dz = analytic_zeta_derivative(b[m]);
            let rx = received_power(ch, m, st);
            let mut g = -problem.theta * problem.power.ap_circuit_power_derivative(b[m], n);
            for k in 0..kk {
                let v = st.combiners.v(m, k);
                let dgain = |j: usize| 2.0 * (c[k * kk + j].conj() * row_dot(v, ch.h(m, j)) * dz).re;
                let da = p * st.eta[k] * dgain(k);
                let mut db: f64 = (0..kk).filter(|&j| j != k).map(|j| p * st.eta[j] * dgain(j)).sum();
                db += st.params.noise * 2.0 * z * dz * v.norm_squared();
                db += (1.0 - 2.0 * z) * dz * v.iter().zip(&rx).map(|(x, r)| x.norm_sqr() * r).sum::<f64>();
                g += accumulate_user(value.a[k], value.b[k], da, db, st.s_min, st.xi);
            }
            g
        })
        .collect()
}

/// Position optimization from `u0` (flat layout).
pub fn apga_positions(
    problem: &PositionProblem<'_>,
    u0: &[f64],
    alpha0: f64,
    cfg: &ApgaConfig,
) -> Result<ApgaOutcome> {
    if u0.len() != 2 * problem.model.num_users {
        return Err(Error::DimensionMismatch("two coordinates per user".into()));
    }
    if !(alpha0 > 0.0) {
        return Err(invalid("initial step must be positive"));
    }
    let proj = RegionProjection(problem.model.regions.clone());
    Ok(apga(problem, &proj, u0, |_| alpha0, cfg))
}

/// Bit allocation from `b0`. The first trial step of every line search
/// spans the whole bit range along the largest gradient component, so that
/// rounding does not swallow small gradients.
pub fn apga_bits(problem: &BitProblem<'_>, b0: &[f64], bounds: BitProjection, cfg: &ApgaConfig) -> Result<ApgaOutcome> {
    if b0.len() != problem.channels.num_aps {
        return Err(Error::DimensionMismatch("one bit depth per AP".into()));
    }
    if bounds.b_min < 1 || bounds.b_min > bounds.b_max {
        return Err(invalid("bit bounds must satisfy 1 <= b_min <= b_max"));
    }
    let span = (bounds.b_max - bounds.b_min).max(1) as f64;
    let alpha0 = |g: &[f64]| {
        let gmax = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if gmax > 0.0 {
            span / gmax
        } else {
            1.0
        }
    };
    Ok(apga(problem, &bounds, b0, alpha0, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_scenario, ScenarioConfig};
    use crate::metrics::mmse_combiners;
    use approx::assert_relative_eq;

    struct Quadratic;

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> f64 {
            -(x[0] - 3.0).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![-2.0 * (x[0] - 3.0)]
        }
    }

    struct Free;

    impl Projection for Free {
        fn project(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }

    #[test]
    fn region_projection() {
        let r = [FasRegion { min: 0.0, max: 1.0 }];
        assert_eq!(project_region(&[-0.1, 0.5], &r), vec![0.0, 0.5]);
        assert_eq!(project_region(&[0.3, 0.7], &r), vec![0.3, 0.7]);
        let once = project_region(&[1.7, -3.0], &r);
        assert_eq!(project_region(&once, &r), once);
    }

    #[test]
    fn bit_projection() {
        assert_eq!(project_bits(&[3.6], 1, 5), vec![4.0]);
        assert_eq!(project_bits(&[0.2], 1, 5), vec![1.0]);
        assert_eq!(project_bits(&[7.9], 1, 5), vec![5.0]);
        assert_eq!(project_bits(&[2.5, 3.5], 1, 5), vec![3.0, 4.0]);
        let p = project_bits(&[2.2, 4.49], 1, 5);
        assert_eq!(project_bits(&p, 1, 5), p);
    }

    #[test]
    fn zero_gradient_accepts_initial_step() {
        let s = backtracking_step(&Quadratic, &Free, &[3.0], 0.0, &[0.0], 1.0, &LineSearch::default());
        assert_eq!(s.alpha, 1.0);
        assert_eq!(s.point, vec![3.0]);
        assert!(!s.stalled);
    }

    #[test]
    fn quadratic_threshold() {
        // From x = 0 the gradient is 6; x+ = 6 alpha and the test reads
        // -(6a - 3)^2 >= -9 + rho * a * 6a, i.e. a <= 36 / (36 + 6 rho).
        let ls = LineSearch::default();
        let bound = 36.0 / (36.0 + 6.0 * ls.sufficient);
        for alpha0 in [0.1, 0.9, 2.0, 8.0] {
            let s = backtracking_step(&Quadratic, &Free, &[0.0], -9.0, &[6.0], alpha0, &ls);
            let mut expected = alpha0;
            while expected > bound {
                expected *= ls.shrink;
            }
            assert_relative_eq!(s.alpha, expected);
            assert!(s.value >= -9.0 + ls.sufficient * s.alpha * (s.point[0]).abs());
        }
    }

    #[test]
    fn momentum_sequence() {
        let mut t = 1.0;
        for _ in 0..20 {
            let n = next_momentum(t);
            assert_eq!(n, (1.0 + (4.0 * t * t + 1.0f64).sqrt()) / 2.0);
            assert!(n > t);
            t = n;
        }
    }

    #[test]
    fn gap_sign() {
        assert_eq!(qos_gap(2.0, 5.0, 0.0), -2.0);
        assert_eq!(qos_gap(3.0, 1.0, 2.0), 0.0);
        for (a, b, s) in [(1.0, 2.0, 1.0), (5.0, 1.0, 2.0), (0.1, 1.0, 0.05)] {
            let se = spectral_efficiency(a / b);
            assert_eq!(qos_gap(a, b, s) > 0.0, se < s);
        }
    }

    struct Instance {
        model: ChannelModel,
        zeta: Vec<f64>,
        eta: Vec<f64>,
        combiners: Combiners,
        params: LinkParams,
        channels: ChannelSet,
    }

    fn instance(seed: u64, s_min: f64) -> (Instance, f64) {
        let cfg = ScenarioConfig {
            num_aps: 2,
            num_users: 2,
            array_h: 2,
            array_v: 1,
            num_paths: 3,
            area_side_m: 60.0,
            ..ScenarioConfig::default()
        };
        let (topo, geo) = generate_scenario(&cfg, seed).unwrap();
        let model = ChannelModel::new(&topo, &geo).unwrap();
        let u0: Vec<f64> = (0..4).map(|i| 0.03 * (i as f64 - 1.5) * (seed as f64 * 0.7).sin()).collect();
        let channels = model.channels_unchecked(&FasPositions::from_flat(&u0));
        let params = LinkParams { p_u: 0.1, noise: 10f64.powf(-12.1) };
        let zeta = vec![0.8825, 0.9655];
        let eta = vec![0.7, 1.0];
        let combiners = mmse_combiners(&channels, &zeta, &eta, params).unwrap();
        (Instance { model, zeta, eta, combiners, params, channels }, s_min)
    }

    fn rel_errors(analytic: &[f64], fd: &[f64]) -> f64 {
        let scale = fd.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        analytic
            .iter()
            .zip(fd)
            .map(|(a, f)| (a - f).abs() / f.abs().max(1e-3 * scale).max(1e-300))
            .fold(0.0, f64::max)
    }

    #[test]
    fn position_gradient_matches_differences() {
        for seed in 0..8 {
            let (inst, s_min) = instance(seed, if seed % 2 == 0 { 0.0 } else { 6.0 });
            let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min, xi: 1e-2 };
            let prob = PositionProblem { model: &inst.model, zeta: &inst.zeta, state };
            let u = vec![0.0, 0.01, 0.02, 0.03];
            let h = 1e-6 * inst.model.wavelength;
            let fd: Vec<f64> = (0..4)
                .map(|i| {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[i] += h;
                    dn[i] -= h;
                    (prob.value(&up) - prob.value(&dn)) / (2.0 * h)
                })
                .collect();
            let g = grad_u(&prob, &u);
            assert!(rel_errors(&g, &fd) < 1e-5, "seed {seed}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn position_gradient_without_quantization() {
        let (inst, _) = instance(3, 0.0);
        let zeta = vec![1.0, 1.0];
        let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 1.0 };
        let prob = PositionProblem { model: &inst.model, zeta: &zeta, state };
        let u = vec![0.01, -0.02, 0.0, 0.03];
        let h = 1e-6 * inst.model.wavelength;
        let fd: Vec<f64> = (0..4)
            .map(|i| {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                (prob.value(&up) - prob.value(&dn)) / (2.0 * h)
            })
            .collect();
        assert!(rel_errors(&grad_u(&prob, &u), &fd) < 1e-5);
    }

    #[test]
    fn bit_gradient_matches_differences() {
        let power = PowerModel::default();
        for seed in 0..8 {
            let (inst, s_min) = instance(seed, if seed % 2 == 0 { 0.0 } else { 6.0 });
            let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min, xi: 1e-2 };
            let prob = BitProblem { channels: &inst.channels, power: &power, state, theta: 3.0 };
            let b = vec![1.7, 3.2];
            let h = 1e-5;
            let fd: Vec<f64> = (0..2)
                .map(|i| {
                    let mut up = b.clone();
                    let mut dn = b.clone();
                    up[i] += h;
                    dn[i] -= h;
                    (prob.value(&up) - prob.value(&dn)) / (2.0 * h)
                })
                .collect();
            let g = grad_b(&prob, &b);
            assert!(rel_errors(&g, &fd) < 1e-5, "seed {seed}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn zero_theta_drops_power_term() {
        let power = PowerModel::default();
        let (inst, _) = instance(1, 0.0);
        let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 0.0 };
        let b = vec![2.5, 4.0];
        let with = grad_b(&BitProblem { channels: &inst.channels, power: &power, state, theta: 2.0 }, &b);
        let without = grad_b(&BitProblem { channels: &inst.channels, power: &power, state, theta: 0.0 }, &b);
        for m in 0..2 {
            let d = 2.0 * power.ap_circuit_power_derivative(b[m], inst.channels.antennas);
            assert_relative_eq!(without[m] - with[m], d, max_relative = 1e-9);
        }
    }

    #[test]
    fn high_resolution_gradient_is_negative() {
        let power = PowerModel::default();
        let (inst, _) = instance(2, 0.0);
        let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 0.0 };
        let prob = BitProblem { channels: &inst.channels, power: &power, state, theta: 1.0 };
        let g = grad_b(&prob, &[12.0, 12.0]);
        assert!(g.iter().all(|x| *x < 0.0));
    }

    #[test]
    fn degenerate_region_pins_positions() {
        let (mut inst, _) = instance(4, 0.0);
        inst.model.regions = vec![FasRegion { min: 0.01, max: 0.01 }; 2];
        let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 1e2 };
        let prob = PositionProblem { model: &inst.model, zeta: &inst.zeta, state };
        let out = apga_positions(&prob, &[0.01; 4], 0.1 * inst.model.wavelength, &ApgaConfig::default()).unwrap();
        assert_eq!(out.x, vec![0.01; 4]);
    }

    #[test]
    fn position_trace_is_monotone() {
        for seed in 0..5 {
            let (inst, _) = instance(seed, 0.0);
            let state =
                FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 1e2 };
            let prob = PositionProblem { model: &inst.model, zeta: &inst.zeta, state };
            let out = apga_positions(&prob, &[0.0; 4], 0.1 * inst.model.wavelength, &ApgaConfig::default()).unwrap();
            for w in out.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
            assert!(out.x.chunks(2).zip(&inst.model.regions).all(|(p, r)| r.contains([p[0], p[1]])));
        }
    }

    #[test]
    fn bit_bounds_pin_output() {
        let power = PowerModel::default();
        let (inst, _) = instance(5, 0.0);
        let state = FixedState { eta: &inst.eta, combiners: &inst.combiners, params: inst.params, s_min: 0.0, xi: 1e2 };
        let prob = BitProblem { channels: &inst.channels, power: &power, state, theta: 0.0 };
        let out = apga_bits(&prob, &[5.0, 5.0], BitProjection { b_min: 3, b_max: 3 }, &ApgaConfig::default()).unwrap();
        assert_eq!(out.x, vec![3.0, 3.0]);
        let out = apga_bits(&prob, &[5.0, 5.0], BitProjection { b_min: 1, b_max: 5 }, &ApgaConfig::default()).unwrap();
        assert!(out.x.iter().all(|b| b.fract() == 0.0 && (1.0..=5.0).contains(b)));
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}
