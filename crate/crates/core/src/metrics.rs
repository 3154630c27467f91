//! Local MMSE combining, per-user SINR/SE, the power consumption model and
//! energy efficiency.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ChannelSet;
use crate::quantization::received_power_diagonal;

/// Transmit and noise power in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub p_u: f64,
    pub noise: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_u >= 0.0) || !(self.noise >= 0.0) {
            return Err(invalid("transmit power and noise power must be non-negative"));
        }
        Ok(())
    }
}

/// `v h` for a row combiner stored by its entries.
#[inline]
pub fn row_dot(v: &DVector<Complex64>, h: &DVector<Complex64>) -> Complex64 {
    v.iter().zip(h.iter()).map(|(a, b)| a * b).sum()
}

/// Per-AP row combiners `v_mk`, indexed `m * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiners {
    pub num_aps: usize,
    pub num_users: usize,
    pub v: Vec<DVector<Complex64>>,
}

impl Combiners {
    pub fn v(&self, m: usize, k: usize) -> &DVector<Complex64> {
        &self.v[m * self.num_users + k]
    }

    /// Maximum-ratio combiners `v_mk = h_mk^H`.
    pub fn mrc(channels: &ChannelSet) -> Self {
        Self {
            num_aps: channels.num_aps,
            num_users: channels.num_users,
            v: channels.h.iter().map(|h| h.map(|x| x.conj())).collect(),
        }
    }
}

fn validate_eta(eta: &[f64], k: usize) -> Result<()> {
    if eta.len() != k {
        return Err(Error::DimensionMismatch(format!("expected {k} power coefficients, got {}", eta.len())));
    }
    if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(invalid("power coefficients must lie in [0, 1]"));
    }
    Ok(())
}

/// Local MMSE combiners of all users at one AP.
///
/// The regularized covariance is factorized once and reused for every user.
pub fn mmse_combiner(
    channels: &[&DVector<Complex64>],
    zeta: f64,
    eta: &[f64],
    params: LinkParams,
) -> Result<Vec<DVector<Complex64>>> {
    params.validate()?;
    validate_eta(eta, channels.len())?;
    let n = channels.first().map_or(0, |h| h.len());
    let mut cov = DMatrix::<Complex64>::zeros(n, n);
    for (h, &e) in channels.iter().zip(eta) {
        cov += (*h * h.adjoint()) * Complex64::new(params.p_u * e, 0.0);
    }
    let diag = received_power_diagonal(channels, eta, params.p_u, 0.0);
    cov *= Complex64::new(zeta, 0.0);
    for (i, d) in diag.iter().enumerate() {
        cov[(i, i)] += Complex64::new((1.0 - zeta) * d + params.noise, 0.0);
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::NumericSingularity("MMSE covariance is not positive definite".into()))?;
    Ok(channels
        .iter()
        .zip(eta)
        .map(|(h, &e)| {
            let x = chol.solve(*h);
            let s = (params.p_u * e).sqrt();
            x.map(|c| c.conj() * s)
        })
        .collect())
}

/// MMSE combiners at every AP.
pub fn mmse_combiners(channels: &ChannelSet, zeta: &[f64], eta: &[f64], params: LinkParams) -> Result<Combiners> {
    if zeta.len() != channels.num_aps {
        return Err(Error::DimensionMismatch("one zeta per AP is required".into()));
    }
    let mut v = Vec::with_capacity(channels.h.len());
    for (m, &z) in zeta.iter().enumerate() {
        v.extend(mmse_combiner(&channels.at_ap(m), z, eta, params)?);
    }
    Ok(Combiners { num_aps: channels.num_aps, num_users: channels.num_users, v })
}

/// Decomposition of one user's SINR: desired signal over interference,
/// thermal noise and quantization noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SinrTerms {
    pub desired: f64,
    pub interference: f64,
    pub thermal: f64,
    pub quantization: f64,
}

impl SinrTerms {
    /// Full denominator.
    pub fn denominator(&self) -> f64 {
        self.interference + self.thermal + self.quantization
    }

    pub fn sinr(&self) -> f64 {
        let b = self.denominator();
        if b > 0.0 {
            self.desired / b
        } else {
            0.0
        }
    }

    pub fn se(&self) -> f64 {
        spectral_efficiency(self.sinr())
    }
}

/// Effective gains `c[k][k'] = sum_m zeta_m v_mk h_mk'`, row-major `k * K + k'`.
pub fn effective_gains(channels: &ChannelSet, zeta: &[f64], combiners: &Combiners) -> Vec<Complex64> {
    let k = channels.num_users;
    let mut c = vec![Complex64::new(0.0, 0.0); k * k];
    for (m, &z) in zeta.iter().enumerate() {
        for i in 0..k {
            let v = combiners.v(m, i);
            for j in 0..k {
                c[i * k + j] += row_dot(v, channels.h(m, j)) * z;
            }
        }
    }
    c
}

/// SINR decomposition of every user for arbitrary combiners.
pub fn sinr_terms(
    channels: &ChannelSet,
    zeta: &[f64],
    eta: &[f64],
    combiners: &Combiners,
    params: LinkParams,
) -> Result<Vec<SinrTerms>> {
    params.validate()?;
    let k = channels.num_users;
    validate_eta(eta, k)?;
    if zeta.len() != channels.num_aps || combiners.v.len() != channels.h.len() {
        return Err(Error::DimensionMismatch("zeta or combiners do not match the channel set".into()));
    }
    let gains = effective_gains(channels, zeta, combiners);
    let mut out = vec![SinrTerms::default(); k];
    for (i, t) in out.iter_mut().enumerate() {
        t.desired = params.p_u * eta[i] * gains[i * k + i].norm_sqr();
        t.interference = (0..k)
            .filter(|&j| j != i)
            .map(|j| params.p_u * eta[j] * gains[i * k + j].norm_sqr())
            .sum();
    }
    for (m, &z) in zeta.iter().enumerate() {
        let q: Vec<f64> = received_power_diagonal(&channels.at_ap(m), eta, params.p_u, params.noise)
            .into_iter()
            .map(|d| z * (1.0 - z) * d)
            .collect();
        for (i, t) in out.iter_mut().enumerate() {
            let v = combiners.v(m, i);
            t.thermal += params.noise * z * z * v.norm_squared();
            t.quantization += q.iter().zip(v.iter()).map(|(r, x)| r * x.norm_sqr()).sum::<f64>();
        }
    }
    Ok(out)
}

/// SINR of user `k`.
pub fn sinr(
    k: usize,
    channels: &ChannelSet,
    zeta: &[f64],
    eta: &[f64],
    combiners: &Combiners,
    params: LinkParams,
) -> Result<f64> {
    let terms = sinr_terms(channels, zeta, eta, combiners, params)?;
    terms
        .get(k)
        .map(SinrTerms::sinr)
        .ok_or_else(|| invalid(format!("user index {k} out of range")))
}

/// `log2(1 + sinr)` in bit/s/Hz.
pub fn spectral_efficiency(sinr: f64) -> f64 {
    sinr.ln_1p() / LN_2
}

/// Circuit, ADC and backhaul power constants, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    /// Power amplifier efficiency in (0, 1].
    pub amp_efficiency: f64,
    /// Per-user circuit power in W.
    pub user_circuit_w: f64,
    pub agc_w: f64,
    pub residual_w: f64,
    /// Walden figure of merit in J per conversion step.
    pub fom_j: f64,
    pub sampling_hz: f64,
    /// Traffic-dependent backhaul power in W per bit/s.
    pub backhaul_w_per_bps: f64,
    /// Fixed backhaul power per AP in W.
    pub backhaul_fixed_w: f64,
    pub bandwidth_hz: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            amp_efficiency: 0.3,
            user_circuit_w: 0.1,
            agc_w: 2e-3,
            residual_w: 10e-3,
            fom_j: 15e-15,
            sampling_hz: 2e9,
            backhaul_w_per_bps: 0.25e-9,
            backhaul_fixed_w: 0.1,
            bandwidth_hz: 20e6,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.amp_efficiency,
            self.user_circuit_w,
            self.agc_w,
            self.residual_w,
            self.fom_j,
            self.sampling_hz,
            self.backhaul_w_per_bps,
            self.backhaul_fixed_w,
            self.bandwidth_hz,
        ];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(invalid("power model constants must be positive and finite"));
        }
        if self.amp_efficiency > 1.0 {
            return Err(invalid("amplifier efficiency must not exceed 1"));
        }
        Ok(())
    }

    /// Power of one ADC at `b` bits, `2^b * FOM * f_s`.
    pub fn adc_power(&self, bits: f64) -> f64 {
        bits.exp2() * self.fom_j * self.sampling_hz
    }

    /// AGC indicator `min(b - 1, 1)`, floored at zero.
    pub fn agc_factor(bits: f64) -> f64 {
        (bits - 1.0).clamp(0.0, 1.0)
    }

    /// Circuit power `P_m,tc` of one AP with `n` antennas.
    pub fn ap_circuit_power(&self, bits: f64, n: usize) -> f64 {
        Self::agc_factor(bits) * self.agc_w + 2.0 * n as f64 * self.adc_power(bits) + n as f64 * self.residual_w
    }

    /// Derivative of [`ap_circuit_power`](Self::ap_circuit_power) in `b`,
    /// taking the AGC slope as 1 below two bits and 0 from two bits on.
    pub fn ap_circuit_power_derivative(&self, bits: f64, n: usize) -> f64 {
        let agc = if bits < 2.0 { self.agc_w } else { 0.0 };
        agc + 2.0 * n as f64 * LN_2 * self.adc_power(bits)
    }

    /// Power that does not depend on traffic, the denominator of the
    /// Dinkelbach ratio.
    pub fn traffic_free_power(&self, eta: &[f64], bits: &[f64], n: usize, p_u: f64) -> f64 {
        let users: f64 = eta.iter().map(|e| e * p_u / self.amp_efficiency + self.user_circuit_w).sum();
        let aps: f64 = bits.iter().map(|&b| self.ap_circuit_power(b, n) + self.backhaul_fixed_w).sum();
        users + aps
    }

    /// Total consumed power including traffic-dependent backhaul.
    pub fn total_power(&self, eta: &[f64], bits: &[f64], n: usize, p_u: f64, sum_se: f64) -> f64 {
        self.traffic_free_power(eta, bits, n, p_u) + self.backhaul_traffic_power(bits.len(), sum_se)
    }

    pub fn backhaul_traffic_power(&self, num_aps: usize, sum_se: f64) -> f64 {
        num_aps as f64 * self.backhaul_w_per_bps * self.bandwidth_hz * sum_se
    }

    /// `B * sum_se / p_tot` in bit/J.
    pub fn energy_efficiency(&self, sum_se: f64, p_tot: f64) -> f64 {
        if sum_se == 0.0 {
            return 0.0;
        }
        self.bandwidth_hz * sum_se / p_tot
    }

    /// Same quantity written as `B / (P_bar / sum_se + B * sum_m P_bc)`.
    pub fn energy_efficiency_rewritten(&self, sum_se: f64, traffic_free: f64, num_aps: usize) -> f64 {
        if sum_se == 0.0 {
            return 0.0;
        }
        self.bandwidth_hz / (traffic_free / sum_se + self.bandwidth_hz * num_aps as f64 * self.backhaul_w_per_bps)
    }
}

/// SE and EE of one system state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEvaluation {
    pub terms: Vec<SinrTerms>,
    pub se: Vec<f64>,
    pub sum_se: f64,
    pub traffic_free_power: f64,
    pub total_power: f64,
    pub ee: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    channels: &ChannelSet,
    zeta: &[f64],
    bits: &[f64],
    eta: &[f64],
    combiners: &Combiners,
    params: LinkParams,
    power: &PowerModel,
) -> Result<LinkEvaluation> {
    let terms = sinr_terms(channels, zeta, eta, combiners, params)?;
    let se: Vec<f64> = terms.iter().map(SinrTerms::se).collect();
    let sum_se = se.iter().sum();
    let traffic_free = power.traffic_free_power(eta, bits, channels.antennas, params.p_u);
    let total = traffic_free + power.backhaul_traffic_power(bits.len(), sum_se);
    Ok(LinkEvaluation {
        ee: power.energy_efficiency(sum_se, total),
        terms,
        se,
        sum_se,
        traffic_free_power: traffic_free,
        total_power: total,
    })
}
