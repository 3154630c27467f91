//! Experiment configuration, parsed from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apga::{ApgaConfig, LineSearch};
use crate::error::{Error, Result};
use crate::geometry::ScenarioConfig;
use crate::metrics::{LinkParams, PowerModel};
use crate::power::PowerControlConfig;
use crate::quantization::ZetaMode;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitMode {
    Equal,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AntennaMode {
    Fixed,
    Fas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    Off,
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub p_u_dbm: f64,
    pub noise_dbm: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { p_u_dbm: 20.0, noise_dbm: -91.0 }
    }
}

impl LinkConfig {
    pub fn params(&self) -> LinkParams {
        LinkParams { p_u: dbm_to_watt(self.p_u_dbm), noise: dbm_to_watt(self.noise_dbm) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub bit_mode: BitMode,
    /// Common depth when bits are not optimized.
    pub bits: u32,
    pub b_min: u32,
    pub b_max: u32,
    pub zeta_mode: ZetaMode,
    pub antenna_mode: AntennaMode,
    pub power_control: PowerMode,
    pub s_min: f64,
    /// Stop threshold on squared EE changes (bit/J for power control, Mbit/J
    /// for the outer loop, objective units for APGA).
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    pub max_apga_iterations: usize,
    pub max_fp_iterations: usize,
    /// Initial position step in wavelengths.
    pub position_step_wavelengths: f64,
    pub line_search_shrink: f64,
    pub line_search_sufficient: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            bit_mode: BitMode::Equal,
            bits: 4,
            b_min: 1,
            b_max: 5,
            zeta_mode: ZetaMode::ExactTable,
            antenna_mode: AntennaMode::Fas,
            power_control: PowerMode::Fp,
            s_min: 0.0,
            tolerance: 1e-5,
            max_outer_iterations: 100,
            max_apga_iterations: 100,
            max_fp_iterations: 1000,
            position_step_wavelengths: 0.1,
            line_search_shrink: 0.5,
            line_search_sufficient: 1e-4,
            penalty_initial: 1e2,
            penalty_growth: 10.0,
            penalty_max: 1e6,
        }
    }
}

impl OptimizationConfig {
    pub fn apga(&self) -> ApgaConfig {
        ApgaConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_apga_iterations,
            line_search: LineSearch {
                shrink: self.line_search_shrink,
                sufficient: self.line_search_sufficient,
                max_shrinks: 50,
            },
        }
    }

    pub fn power_control(&self) -> PowerControlConfig {
        PowerControlConfig {
            tolerance: self.tolerance,
            ee_unit: 1.0,
            max_iterations: self.max_fp_iterations,
            s_min: self.s_min,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.bits < 1 {
            return bad("bits must be at least 1");
        }
        if self.b_min < 1 || self.b_min > self.b_max {
            return bad("bit bounds must satisfy 1 <= b_min <= b_max");
        }
        if self.b_max > 30 || self.bits > 30 {
            return bad("bit depths above 30 are not supported");
        }
        if !(self.s_min >= 0.0) {
            return bad("s_min must be non-negative");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_outer_iterations == 0 || self.max_apga_iterations == 0 || self.max_fp_iterations == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.position_step_wavelengths > 0.0) {
            return bad("position_step_wavelengths must be positive");
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0)
            || !(self.line_search_sufficient > 0.0 && self.line_search_sufficient < 1.0)
        {
            return bad("line-search constants must lie in (0, 1)");
        }
        if !(self.penalty_initial > 0.0) || !(self.penalty_growth >= 1.0) || !(self.penalty_max >= self.penalty_initial)
        {
            return bad("penalty schedule must satisfy 0 < initial <= max and growth >= 1");
        }
        Ok(())
    }
}

/// Overrides of the optimization modes for one pipeline variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub bit_mode: Option<BitMode>,
    pub antenna_mode: Option<AntennaMode>,
    pub power_control: Option<PowerMode>,
}

impl Variant {
    pub fn apply(&self, base: &OptimizationConfig) -> OptimizationConfig {
        OptimizationConfig {
            bit_mode: self.bit_mode.unwrap_or(base.bit_mode),
            antenna_mode: self.antenna_mode.unwrap_or(base.antenna_mode),
            power_control: self.power_control.unwrap_or(base.power_control),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

/// Parameters accepted by [`ExperimentConfig::with_param`].
pub const SWEEP_PARAMS: [&str; 8] =
    ["bits", "region_side", "num_aps", "num_users", "p_u_dbm", "s_min", "array_h", "array_v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub realizations: usize,
    pub scenario: ScenarioConfig,
    pub link: LinkConfig,
    pub power: PowerModel,
    pub optimization: OptimizationConfig,
    pub sweep: Option<SweepSpec>,
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            realizations: 200,
            scenario: ScenarioConfig::default(),
            link: LinkConfig::default(),
            power: PowerModel::default(),
            optimization: OptimizationConfig::default(),
            sweep: None,
            variants: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be positive".into()));
        }
        self.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.power.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !self.link.p_u_dbm.is_finite() || !self.link.noise_dbm.is_finite() {
            return Err(Error::Config("link powers must be finite".into()));
        }
        self.optimization.validate()?;
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("variant names must be unique".into()));
        }
        if names.iter().any(|n| n.is_empty() || n.contains([',', ';', '\n', '"'])) {
            return Err(Error::Config("variant names must be non-empty and free of separators".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            for v in &s.values {
                self.with_param(&s.param, *v)?;
            }
        }
        Ok(())
    }

    /// Copy with one sweep parameter set to `value`.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= 1e6 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{param} must be a positive integer, got {value}")))
            }
        };
        match param {
            "bits" => c.optimization.bits = count(value)? as u32,
            "region_side" => c.scenario.region_side_wavelengths = value,
            "num_aps" => c.scenario.num_aps = count(value)?,
            "num_users" => c.scenario.num_users = count(value)?,
            "p_u_dbm" => c.link.p_u_dbm = value,
            "s_min" => c.optimization.s_min = value,
            "array_h" => c.scenario.array_h = count(value)?,
            "array_v" => c.scenario.array_v = count(value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown sweep parameter '{param}', expected one of {}",
                    SWEEP_PARAMS.join(", ")
                )))
            }
        }
        c.sweep = None;
        c.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        c.optimization.validate()?;
        Ok(c)
    }

    /// Named optimization settings of every variant; a single `default`
    /// variant when none are configured.
    pub fn resolved_variants(&self) -> Vec<(String, OptimizationConfig)> {
        if self.variants.is_empty() {
            vec![("default".to_string(), self.optimization.clone())]
        } else {
            self.variants.iter().map(|v| (v.name.clone(), v.apply(&self.optimization))).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_conversion() {
        assert_relative_eq!(dbm_to_watt(20.0), 0.1, max_relative = 1e-12);
        assert_relative_eq!(dbm_to_watt(-91.0), 10f64.powf(-12.1), max_relative = 1e-12);
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.sweep = Some(SweepSpec { param: "bits".into(), values: vec![1.0, 2.0] });
        c.variants.push(Variant {
            name: "fixed".into(),
            bit_mode: None,
            antenna_mode: Some(AntennaMode::Fixed),
            power_control: Some(PowerMode::Off),
        });
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "realizations = 0",
            "[optimization]\nb_min = 4\nb_max = 2",
            "[optimization]\npower_control = \"sometimes\"",
            "[scenario]\nnum_aps = 0",
            "unknown_key = 3",
            "[sweep]\nparam = \"colour\"\nvalues = [1.0]",
            "[sweep]\nparam = \"bits\"\nvalues = [2.5]",
            "[[variant]]\nname = \"a\"\n[[variant]]\nname = \"a\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn params_apply() {
        let c = ExperimentConfig::default();
        assert_eq!(c.with_param("bits", 7.0).unwrap().optimization.bits, 7);
        assert_eq!(c.with_param("region_side", 2.0).unwrap().scenario.region_side_wavelengths, 2.0);
        assert_eq!(c.with_param("num_aps", 3.0).unwrap().scenario.num_aps, 3);
        assert!(c.with_param("num_users", 0.0).is_err());
    }

    #[test]
    fn variants_override_modes() {
        let text = "[optimization]\npower_control = \"fp\"\n[[variant]]\nname = \"off\"\npower_control = \"off\"\n[[variant]]\nname = \"on\"";
        let c = ExperimentConfig::from_toml(text).unwrap();
        let v = c.resolved_variants();
        assert_eq!(v[0].1.power_control, PowerMode::Off);
        assert_eq!(v[1].1.power_control, PowerMode::Fp);
        assert_eq!(ExperimentConfig::default().resolved_variants()[0].0, "default");
    }
}
