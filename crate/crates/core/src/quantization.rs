//! Additive quantization noise model (AQNM) for the AP-side ADCs.
//!
//! An ADC with `b` bits is modelled as a linear gain `zeta(b)` plus an
//! uncorrelated Gaussian noise whose covariance depends on the received
//! signal power. Two modes exist for the distortion factor: the tabulated
//! values for 1..=5 bits, and the smooth high-resolution approximation
//! `1 - (pi*sqrt(3)/2) * 2^(-2b)` which is also valid for relaxed real `b`.

use std::f64::consts::{LN_2, PI};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tabulated distortion factors for 1..=5 bits.
pub const ZETA_TABLE: [f64; 5] = [0.6366, 0.8825, 0.9655, 0.9905, 0.9975];

/// `pi * sqrt(3) / 2`, the constant of the high-resolution approximation.
pub const ZETA_APPROX_CONSTANT: f64 = PI * 1.732_050_807_568_877_2 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaMode {
    /// Table values for b <= 5, approximation above.
    #[default]
    ExactTable,
    /// Approximation for every b.
    Analytic,
}

/// Distortion factor for an integer bit depth.
pub fn quantization_factor(bits: u32, mode: ZetaMode) -> Result<f64> {
    if bits < 1 {
        return Err(invalid(format!("bit depth must be >= 1, got {bits}")));
    }
    match mode {
        ZetaMode::ExactTable if bits <= 5 => Ok(ZETA_TABLE[bits as usize - 1]),
        _ => Ok(analytic_zeta(bits as f64)),
    }
}

/// Approximate distortion factor, defined for real-valued `b`.
pub fn analytic_zeta(b: f64) -> f64 {
    1.0 - ZETA_APPROX_CONSTANT * (-2.0 * b).exp2()
}

/// d zeta / d b of the approximation.
pub fn analytic_zeta_derivative(b: f64) -> f64 {
    ZETA_APPROX_CONSTANT * 2.0 * LN_2 * (-2.0 * b).exp2()
}

/// Per-AP quantizer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerState {
    pub bits: Vec<u32>,
    pub zeta: Vec<f64>,
    pub mode: ZetaMode,
}

impl QuantizerState {
    pub fn new(bits: Vec<u32>, mode: ZetaMode) -> Result<Self> {
        let zeta = bits
            .iter()
            .map(|&b| quantization_factor(b, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bits, zeta, mode })
    }

    pub fn equal(num_aps: usize, bits: u32, mode: ZetaMode) -> Result<Self> {
        Self::new(vec![bits; num_aps], mode)
    }

    pub fn bits_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

/// Diagonal of the quantization-noise covariance at one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCovariance(pub Vec<f64>);

impl DiagonalCovariance {
    pub fn to_matrix(&self) -> nalgebra::DMatrix<Complex64> {
        let d = DVector::from_iterator(self.0.len(), self.0.iter().map(|&x| Complex64::new(x, 0.0)));
        nalgebra::DMatrix::from_diagonal(&d)
    }

    /// `v R v^H` for a row combiner `v`.
    pub fn quadratic_form(&self, v: &DVector<Complex64>) -> f64 {
        self.0.iter().zip(v.iter()).map(|(r, x)| r * x.norm_sqr()).sum()
    }
}

/// Diagonal of `p_u * sum_k eta_k h_k h_k^H + noise * I`.
pub fn received_power_diagonal(
    channels: &[&DVector<Complex64>],
    eta: &[f64],
    p_u: f64,
    noise: f64,
) -> Vec<f64> {
    let n = channels.first().map_or(0, |h| h.len());
    let mut diag = vec![noise; n];
    for (h, &e) in channels.iter().zip(eta) {
        for (d, x) in diag.iter_mut().zip(h.iter()) {
            *d += p_u * e * x.norm_sqr();
        }
    }
    diag
}

/// Quantizer gain and noise covariance at one AP.
///
/// `channels` holds `h_mk` for every user `k` at this AP.
pub fn quantize_gain_and_noise(
    zeta: f64,
    channels: &[&DVector<Complex64>],
    eta: &[f64],
    p_u: f64,
    noise: f64,
) -> Result<(f64, DiagonalCovariance)> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(invalid(format!("zeta must lie in (0, 1], got {zeta}")));
    }
    if p_u < 0.0 || noise < 0.0 {
        return Err(invalid("transmit power and noise power must be non-negative"));
    }
    if channels.len() != eta.len() {
        return Err(invalid("one power coefficient per channel is required"));
    }
    if eta.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
        return Err(invalid("power coefficients must lie in [0, 1]"));
    }
    let scale = zeta * (1.0 - zeta);
    let diag = received_power_diagonal(channels, eta, p_u, noise)
        .into_iter()
        .map(|d| scale * d)
        .collect();
    Ok((zeta, DiagonalCovariance(diag)))
}
