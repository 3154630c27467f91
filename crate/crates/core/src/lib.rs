//! Energy-efficiency optimization for cell-free massive MIMO uplinks whose
//! users carry fluid antennas and whose APs use low-resolution ADCs.
//!
//! Modules follow the processing chain: [`geometry`] draws scenarios and
//! synthesizes channels, [`quantization`] models the ADCs, [`metrics`]
//! computes combiners, SINR and power, [`power`] and [`apga`] optimize the
//! three resource blocks, and [`ao`] alternates between them. [`sweep`] and
//! [`report`] run Monte-Carlo experiments and write their results.

pub mod ao;
pub mod apga;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod power;
pub mod quantization;
pub mod report;
pub mod sweep;

pub use ao::{ao_optimize, AoContext, AoOutcome, OptState, Stage, StageRecord};
pub use apga::{apga_bits, apga_positions, grad_b, grad_u, ApgaConfig, ApgaOutcome, BitProblem, PositionProblem};
pub use config::{AntennaMode, BitMode, ExperimentConfig, OptimizationConfig, PowerMode, SweepSpec, Variant};
pub use error::{Error, Result};
pub use geometry::{
    generate_scenario, ChannelModel, ChannelSet, FasPositions, FasRegion, LinkGeometry, ScenarioConfig, Topology,
};
pub use metrics::{evaluate, mmse_combiners, Combiners, LinkEvaluation, LinkParams, PowerModel};
pub use power::{power_control, FixedCombinerModel, PowerContext, PowerControlConfig, PowerControlOutcome};
pub use quantization::{quantization_factor, QuantizerState, ZetaMode};
pub use report::emit_report;
pub use sweep::{run_realization, run_sweep, summarize, Dataset, RunRecord};
