//! Energy-efficient power control by Dinkelbach iterations combined with
//! the Lagrangian-dual and quadratic transforms of the sum-log-ratio
//! objective.
//!
//! Combiners stay fixed inside this loop. With fixed combiners the desired
//! power `A_k` and the interference-plus-noise power `B_k` of every user are
//! affine in the power coefficients, so they are precomputed once as
//! coefficient tables and each iteration costs `O(K^2)`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::metrics::{effective_gains, spectral_efficiency, Combiners, LinkParams, PowerModel};

/// `A_k`, `B_k` and `A_k / (p_u eta_k)` of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioParts {
    pub a: f64,
    pub b: f64,
    pub a_bar: f64,
}

impl RatioParts {
    pub fn sinr(&self) -> f64 {
        if self.b > 0.0 {
            self.a / self.b
        } else {
            0.0
        }
    }
}

/// SINR numerator and denominator as affine functions of `eta`.
#[derive(Debug, Clone)]
pub struct FixedCombinerModel {
    pub num_users: usize,
    pub num_aps: usize,
    pub antennas: usize,
    pub p_u: f64,
    /// `|sum_m zeta_m v_mk h_mj|^2`, row-major `k * K + j`.
    gain_sq: Vec<f64>,
    /// `sum_m zeta_m (1 - zeta_m) sum_n |v_mk,n|^2 |h_mj,n|^2`, row-major.
    quant: Vec<f64>,
    /// Thermal noise plus the noise part of the quantization covariance.
    floor: Vec<f64>,
}

impl FixedCombinerModel {
    pub fn new(channels: &ChannelSet, zeta: &[f64], combiners: &Combiners, params: LinkParams) -> Result<Self> {
        params.validate()?;
        if zeta.len() != channels.num_aps || combiners.v.len() != channels.h.len() {
            return Err(Error::DimensionMismatch("zeta or combiners do not match the channel set".into()));
        }
        let k = channels.num_users;
        let gain_sq = effective_gains(channels, zeta, combiners).iter().map(|c| c.norm_sqr()).collect();
        let mut quant = vec![0.0; k * k];
        let mut floor = vec![0.0; k];
        for (m, &z) in zeta.iter().enumerate() {
            let q = z * (1.0 - z);
            for i in 0..k {
                let v = combiners.v(m, i);
                let v2 = v.norm_squared();
                floor[i] += params.noise * (z * z + q) * v2;
                for j in 0..k {
                    let h = channels.h(m, j);
                    let s: f64 = v.iter().zip(h.iter()).map(|(a, b)| a.norm_sqr() * b.norm_sqr()).sum();
                    quant[i * k + j] += q * s;
                }
            }
        }
        Ok(Self {
            num_users: k,
            num_aps: channels.num_aps,
            antennas: channels.antennas,
            p_u: params.p_u,
            gain_sq,
            quant,
            floor,
        })
    }

    pub fn gain_sq(&self, k: usize, j: usize) -> f64 {
        self.gain_sq[k * self.num_users + j]
    }

    pub fn quant(&self, k: usize, j: usize) -> f64 {
        self.quant[k * self.num_users + j]
    }

    /// `A_k`, `B_k`, `A_bar_k` for every user.
    pub fn sinr_ratio_parts(&self, eta: &[f64]) -> Vec<RatioParts> {
        let kk = self.num_users;
        (0..kk)
            .map(|k| {
                let a_bar = self.gain_sq(k, k);
                let mut b = self.floor[k];
                for (j, &e) in eta.iter().enumerate() {
                    if j != k {
                        b += self.p_u * e * self.gain_sq(k, j);
                    }
                    b += self.p_u * e * self.quant(k, j);
                }
                RatioParts { a: self.p_u * eta[k] * a_bar, b, a_bar }
            })
            .collect()
    }

    pub fn sum_se(&self, eta: &[f64]) -> f64 {
        self.sinr_ratio_parts(eta).iter().map(|p| spectral_efficiency(p.sinr())).sum()
    }
}

/// `theta = sum_se / P_bar`.
pub fn update_dinkelbach(sum_se: f64, traffic_free_power: f64) -> f64 {
    sum_se / traffic_free_power
}

pub fn update_gamma(parts: &[RatioParts]) -> Vec<f64> {
    parts.iter().map(RatioParts::sinr).collect()
}

pub fn update_varpi(parts: &[RatioParts], gamma: &[f64]) -> Vec<f64> {
    parts
        .iter()
        .zip(gamma)
        .map(|(p, g)| {
            let d = p.a + p.b;
            if d > 0.0 {
                ((1.0 + g) * p.a).sqrt() / d
            } else {
                0.0
            }
        })
        .collect()
}

/// QoS floors `eta_k,min = (2^S_min - 1) B_k / (p_u A_bar_k)`.
pub fn qos_floor(parts: &[RatioParts], s_min: f64, p_u: f64) -> Vec<f64> {
    let target = s_min.exp2() - 1.0;
    parts
        .iter()
        .map(|p| {
            if target == 0.0 {
                0.0
            } else if p.a_bar > 0.0 {
                target * p.b / (p_u * p.a_bar)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Result of the closed-form power update.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaUpdate {
    pub eta: Vec<f64>,
    /// Users whose QoS floor exceeds full power; their coefficient is pinned to 1.
    pub infeasible: Vec<bool>,
}

/// Stationary point of the quadratic-transform surrogate in `eta`, clamped
/// to `[eta_min, 1]`.
///
/// `theta_nat` is the Dinkelbach parameter expressed for natural-log rates.
pub fn update_eta(
    model: &FixedCombinerModel,
    gamma: &[f64],
    varpi: &[f64],
    theta_nat: f64,
    eta_min: &[f64],
    amp_efficiency: f64,
) -> EtaUpdate {
    let kk = model.num_users;
    let mut eta = vec![0.0; kk];
    let mut infeasible = vec![false; kk];
    for k in 0..kk {
        let num = (1.0 + gamma[k]) * varpi[k].powi(2) * model.gain_sq(k, k);
        let bracket: f64 = (0..kk)
            .map(|j| varpi[j].powi(2) * (model.gain_sq(j, k) + model.quant(j, k)))
            .sum::<f64>()
            + theta_nat / amp_efficiency;
        let den = model.p_u * bracket * bracket;
        let stationary = if den > 0.0 { num / den } else { 1.0 };
        if eta_min[k] > 1.0 {
            infeasible[k] = true;
            eta[k] = 1.0;
        } else {
            eta[k] = stationary.max(eta_min[k]).min(1.0);
        }
    }
    EtaUpdate { eta, infeasible }
}

/// Lagrangian-dual surrogate `s_1` (natural log).
pub fn dual_objective(parts: &[RatioParts], gamma: &[f64], theta_nat: f64, traffic_free: f64) -> f64 {
    parts
        .iter()
        .zip(gamma)
        .map(|(p, g)| {
            let d = p.a + p.b;
            let ratio = if d > 0.0 { (1.0 + g) * p.a / d } else { 0.0 };
            g.ln_1p() - g + ratio
        })
        .sum::<f64>()
        - theta_nat * traffic_free
}

/// Quadratic-transform surrogate `s_2` (natural log).
pub fn quadratic_objective(
    parts: &[RatioParts],
    gamma: &[f64],
    varpi: &[f64],
    theta_nat: f64,
    traffic_free: f64,
) -> f64 {
    parts
        .iter()
        .zip(gamma)
        .zip(varpi)
        .map(|((p, g), w)| g.ln_1p() - g + 2.0 * w * ((1.0 + g) * p.a).sqrt() - w * w * (p.a + p.b))
        .sum::<f64>()
        - theta_nat * traffic_free
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerControlConfig {
    /// Threshold on the squared EE change between iterations.
    pub tolerance: f64,
    /// Multiplier applied to EE (bit/J) before the convergence test.
    pub ee_unit: f64,
    pub max_iterations: usize,
    pub s_min: f64,
}

impl Default for PowerControlConfig {
    fn default() -> Self {
        Self { tolerance: 1e-5, ee_unit: 1.0, max_iterations: 1000, s_min: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerControlOutcome {
    pub eta: Vec<f64>,
    /// EE (bit/J) at the initial point and after every iteration.
    pub ee_trace: Vec<f64>,
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub infeasible: Vec<bool>,
}

/// Inputs the power loop needs besides the fixed-combiner model.
#[derive(Debug, Clone, Copy)]
pub struct PowerContext<'a> {
    pub model: &'a FixedCombinerModel,
    pub power: &'a PowerModel,
    pub bits: &'a [f64],
}

impl PowerContext<'_> {
    pub fn traffic_free(&self, eta: &[f64]) -> f64 {
        self.power.traffic_free_power(eta, self.bits, self.model.antennas, self.model.p_u)
    }

    pub fn energy_efficiency(&self, eta: &[f64]) -> f64 {
        let sum_se = self.model.sum_se(eta);
        let total = self.traffic_free(eta) + self.power.backhaul_traffic_power(self.bits.len(), sum_se);
        self.power.energy_efficiency(sum_se, total)
    }
}

/// Dinkelbach/FP power control starting from `eta0`.
pub fn power_control(ctx: PowerContext<'_>, eta0: &[f64], cfg: &PowerControlConfig) -> Result<PowerControlOutcome> {
    let model = ctx.model;
    if eta0.len() != model.num_users {
        return Err(Error::DimensionMismatch("one initial power coefficient per user".into()));
    }
    let mut eta = eta0.to_vec();
    let mut ee = ctx.energy_efficiency(&eta);
    let mut trace = vec![ee];
    let mut theta = 0.0;
    let mut infeasible = vec![false; model.num_users];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let parts = model.sinr_ratio_parts(&eta);
        let sum_se: f64 = parts.iter().map(|p| spectral_efficiency(p.sinr())).sum();
        theta = update_dinkelbach(sum_se, ctx.traffic_free(&eta));
        let eta_min = qos_floor(&parts, cfg.s_min, model.p_u);
        let gamma = update_gamma(&parts);
        let varpi = update_varpi(&parts, &gamma);
        let update = update_eta(model, &gamma, &varpi, theta * LN_2, &eta_min, ctx.power.amp_efficiency);
        eta = update.eta;
        infeasible = update.infeasible;
        let next = ctx.energy_efficiency(&eta);
        trace.push(next);
        let delta = (next - ee) * cfg.ee_unit;
        ee = next;
        if delta * delta <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(PowerControlOutcome { eta, ee_trace: trace, theta, iterations, converged, infeasible })
}
