//! Alternating optimization of power, FAS positions and ADC bits, with a
//! combiner refresh closing every outer iteration.

use serde::{Deserialize, Serialize};

use crate::apga::{apga_bits, apga_positions, BitProblem, BitProjection, FixedState, PositionProblem};
use crate::config::{AntennaMode, BitMode, OptimizationConfig, PowerMode};
use crate::error::Result;
use crate::geometry::{ChannelModel, ChannelSet, FasPositions};
use crate::metrics::{evaluate, mmse_combiners, Combiners, LinkEvaluation, LinkParams, PowerModel};
use crate::power::{power_control, FixedCombinerModel, PowerContext};
use crate::quantization::{analytic_zeta, quantization_factor, ZetaMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Init,
    AfterPower,
    AfterPosition,
    AfterBits,
    Converged,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Init, Stage::AfterPower, Stage::AfterPosition, Stage::AfterBits, Stage::Converged];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::AfterPower => "after-power",
            Stage::AfterPosition => "after-position",
            Stage::AfterBits => "after-bits",
            Stage::Converged => "converged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// Noteworthy events of one run, serialized as short tags.
pub mod flag {
    pub const FP_NOT_CONVERGED: &str = "fp-not-converged";
    pub const QOS_INFEASIBLE: &str = "qos-infeasible";
    pub const QOS_VIOLATED: &str = "qos-violated";
    pub const POSITION_STALL: &str = "position-stall";
    pub const BIT_STALL: &str = "bit-stall";
    pub const STAGE_REJECTED: &str = "stage-rejected";
    pub const COMBINERS_KEPT: &str = "combiners-kept";
    pub const MAX_ITERATIONS: &str = "max-iterations";
    pub const STAGE_ERROR: &str = "stage-error";
}

/// Decision variables and derived quantities of one system state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub eta: Vec<f64>,
    /// Flat `[x_0, y_0, x_1, ...]`.
    pub positions: Vec<f64>,
    pub bits: Vec<u32>,
    pub zeta: Vec<f64>,
    pub combiners: Combiners,
    pub channels: ChannelSet,
    pub penalty: f64,
}

impl OptState {
    pub fn bits_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub outer_iter: usize,
    pub per_user_se: Vec<f64>,
    pub sum_se: f64,
    pub p_tot: f64,
    pub ee: f64,
    pub eta: Vec<f64>,
    pub positions: Vec<f64>,
    pub bits: Vec<u32>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    pub state: OptState,
    pub records: Vec<StageRecord>,
    /// EE at the start and after every outer iteration.
    pub ee_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

/// Physical context of one realization.
#[derive(Debug, Clone, Copy)]
pub struct AoContext<'a> {
    pub model: &'a ChannelModel,
    pub params: LinkParams,
    pub power: &'a PowerModel,
}

fn zeta_mode(cfg: &OptimizationConfig) -> ZetaMode {
    match cfg.bit_mode {
        BitMode::Optimize => ZetaMode::Analytic,
        BitMode::Equal => cfg.zeta_mode,
    }
}

fn zetas(bits: &[u32], mode: ZetaMode) -> Result<Vec<f64>> {
    bits.iter().map(|&b| quantization_factor(b, mode)).collect()
}

struct Runner<'a> {
    ctx: AoContext<'a>,
    cfg: &'a OptimizationConfig,
    flags: Vec<String>,
}

impl Runner<'_> {
    fn flag(&mut self, f: &str) {
        if !self.flags.iter().any(|x| x == f) {
            self.flags.push(f.to_string());
        }
    }

    fn evaluate(&self, s: &OptState) -> Result<LinkEvaluation> {
        evaluate(&s.channels, &s.zeta, &s.bits_f64(), &s.eta, &s.combiners, self.ctx.params, self.ctx.power)
    }

    fn record(&self, stage: Stage, outer_iter: usize, s: &OptState, e: &LinkEvaluation) -> StageRecord {
        StageRecord {
            stage,
            outer_iter,
            per_user_se: e.se.clone(),
            sum_se: e.sum_se,
            p_tot: e.total_power,
            ee: e.ee,
            eta: s.eta.clone(),
            positions: s.positions.clone(),
            bits: s.bits.clone(),
            flags: self.flags.clone(),
        }
    }

    /// Keeps `candidate` only if EE does not drop.
    fn accept(&mut self, current: &mut (OptState, LinkEvaluation), candidate: Result<OptState>, reject_flag: &str) {
        match candidate.and_then(|c| self.evaluate(&c).map(|e| (c, e))) {
            Ok((c, e)) if e.ee >= current.1.ee => *current = (c, e),
            Ok(_) => self.flag(reject_flag),
            Err(_) => self.flag(flag::STAGE_ERROR),
        }
    }

    fn power_stage(&mut self, s: &OptState) -> Result<OptState> {
        let model = FixedCombinerModel::new(&s.channels, &s.zeta, &s.combiners, self.ctx.params)?;
        let bits = s.bits_f64();
        let pc = PowerContext { model: &model, power: self.ctx.power, bits: &bits };
        let out = power_control(pc, &s.eta, &self.cfg.power_control())?;
        if !out.converged {
            self.flag(flag::FP_NOT_CONVERGED);
        }
        if out.infeasible.iter().any(|&x| x) {
            self.flag(flag::QOS_INFEASIBLE);
        }
        Ok(OptState { eta: out.eta, ..s.clone() })
    }

    fn fixed<'s>(&self, s: &'s OptState) -> FixedState<'s> {
        FixedState { eta: &s.eta, combiners: &s.combiners, params: self.ctx.params, s_min: self.cfg.s_min, xi: s.penalty }
    }

    fn position_stage(&mut self, s: &OptState) -> Result<OptState> {
        let problem = PositionProblem { model: self.ctx.model, zeta: &s.zeta, state: self.fixed(s) };
        let step = self.cfg.position_step_wavelengths * self.ctx.model.wavelength;
        let out = apga_positions(&problem, &s.positions, step, &self.cfg.apga())?;
        if out.stalled {
            self.flag(flag::POSITION_STALL);
        }
        let mut next = s.clone();
        next.penalty = self.escalate(s.penalty, problem.evaluate(&out.x).violated());
        next.channels = self.ctx.model.channels(&FasPositions::from_flat(&out.x))?;
        next.positions = out.x;
        Ok(next)
    }

    fn bit_stage(&mut self, s: &OptState) -> Result<OptState> {
        let problem = BitProblem { channels: &s.channels, power: self.ctx.power, state: self.fixed(s), theta: 0.0 };
        let bounds = BitProjection { b_min: self.cfg.b_min, b_max: self.cfg.b_max };
        let out = apga_bits(&problem, &s.bits_f64(), bounds, &self.cfg.apga())?;
        if out.stalled {
            self.flag(flag::BIT_STALL);
        }
        let mut next = s.clone();
        next.penalty = self.escalate(s.penalty, problem.evaluate(&out.x).violated());
        next.bits = out.x.iter().map(|&b| b as u32).collect();
        next.zeta = out.x.iter().map(|&b| analytic_zeta(b)).collect();
        Ok(next)
    }

    fn escalate(&mut self, xi: f64, violated: bool) -> f64 {
        if violated {
            self.flag(flag::QOS_VIOLATED);
            (xi * self.cfg.penalty_growth).min(self.cfg.penalty_max)
        } else {
            xi
        }
    }

    fn refresh(&self, s: &OptState) -> Result<OptState> {
        let combiners = mmse_combiners(&s.channels, &s.zeta, &s.eta, self.ctx.params)?;
        Ok(OptState { combiners, ..s.clone() })
    }
}

/// Initial state: full power, antennas at their reference points, bits at
/// the configured depth (or `b_max` when optimized), MMSE combiners.
pub fn initial_state(ctx: AoContext<'_>, cfg: &OptimizationConfig) -> Result<OptState> {
    let m = ctx.model;
    let positions = m.centers();
    let depth = match cfg.bit_mode {
        BitMode::Equal => cfg.bits,
        BitMode::Optimize => cfg.b_max,
    };
    let bits = vec![depth; m.num_aps];
    let zeta = zetas(&bits, zeta_mode(cfg))?;
    let eta = vec![1.0; m.num_users];
    let channels = m.channels(&positions)?;
    let combiners = mmse_combiners(&channels, &zeta, &eta, ctx.params)?;
    Ok(OptState {
        eta,
        positions: positions.to_flat(),
        bits,
        zeta,
        combiners,
        channels,
        penalty: cfg.penalty_initial,
    })
}

/// Runs the enabled stages in the order power, positions, bits, combiner
/// refresh until the squared EE change (Mbit/J) drops below the tolerance.
///
/// Every stage result is kept only if it does not lower EE, so the recorded
/// EE sequence is non-decreasing.
pub fn ao_optimize(ctx: AoContext<'_>, cfg: &OptimizationConfig) -> Result<AoOutcome> {
    let mut run = Runner { ctx, cfg, flags: Vec::new() };
    let init = initial_state(ctx, cfg)?;
    let init_eval = run.evaluate(&init)?;
    let mut records = vec![run.record(Stage::Init, 0, &init, &init_eval)];
    let mut ee_trace = vec![init_eval.ee];
    let mut cur = (init, init_eval);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_outer_iterations {
        iterations += 1;
        let before = cur.1.ee;
        if cfg.power_control == PowerMode::Fp {
            let cand = run.power_stage(&cur.0);
            run.accept(&mut cur, cand, flag::STAGE_REJECTED);
            records.push(run.record(Stage::AfterPower, iterations, &cur.0, &cur.1));
        }
        if cfg.antenna_mode == AntennaMode::Fas {
            let cand = run.position_stage(&cur.0);
            run.accept(&mut cur, cand, flag::STAGE_REJECTED);
            records.push(run.record(Stage::AfterPosition, iterations, &cur.0, &cur.1));
        }
        if cfg.bit_mode == BitMode::Optimize {
            let cand = run.bit_stage(&cur.0);
            run.accept(&mut cur, cand, flag::STAGE_REJECTED);
            records.push(run.record(Stage::AfterBits, iterations, &cur.0, &cur.1));
        }
        let cand = run.refresh(&cur.0);
        run.accept(&mut cur, cand, flag::COMBINERS_KEPT);
        ee_trace.push(cur.1.ee);
        // Mbit/J here; in bit/J the loop rarely stops before the cap.
        let delta = (cur.1.ee - before) * 1e-6;
        if delta * delta <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        run.flag(flag::MAX_ITERATIONS);
    }
    records.push(run.record(Stage::Converged, iterations, &cur.0, &cur.1));
    Ok(AoOutcome { state: cur.0, records, ee_trace, iterations, converged, flags: run.flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::geometry::{generate_scenario, ScenarioConfig};

    fn setup(seed: u64) -> (ChannelModel, ExperimentConfig) {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario = ScenarioConfig { num_aps: 5, num_users: 4, array_h: 2, array_v: 2, num_paths: 5, ..cfg.scenario };
        let (topo, geo) = generate_scenario(&cfg.scenario, seed).unwrap();
        (ChannelModel::new(&topo, &geo).unwrap(), cfg)
    }

    fn run(seed: u64, opt: &OptimizationConfig) -> AoOutcome {
        let (model, cfg) = setup(seed);
        let ctx = AoContext { model: &model, params: cfg.link.params(), power: &cfg.power };
        ao_optimize(ctx, opt).unwrap()
    }

    fn all_off() -> OptimizationConfig {
        OptimizationConfig {
            bit_mode: BitMode::Equal,
            antenna_mode: AntennaMode::Fixed,
            power_control: PowerMode::Off,
            ..OptimizationConfig::default()
        }
    }

    #[test]
    fn disabled_stages_give_baseline() {
        let out = run(1, &all_off());
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].ee, out.records[1].ee);
        assert_eq!(out.records[1].stage, Stage::Converged);
    }

    #[test]
    fn joint_dominates_single_stages() {
        for seed in 0..3 {
            let base = run(seed, &all_off());
            let ee = |o: &AoOutcome| o.records.last().unwrap().ee;
            let singles = [
                OptimizationConfig { power_control: PowerMode::Fp, ..all_off() },
                OptimizationConfig { antenna_mode: AntennaMode::Fas, ..all_off() },
                OptimizationConfig { bit_mode: BitMode::Optimize, ..all_off() },
            ];
            for s in &singles {
                let single = run(seed, s);
                assert!(ee(&single) >= ee(&base) * (1.0 - 1e-9));
                for w in single.ee_trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
                }
            }
            let joint = run(seed, &OptimizationConfig { bit_mode: BitMode::Optimize, ..OptimizationConfig::default() });
            assert!(joint.converged);
            for w in joint.records.windows(2) {
                assert!(w[1].ee >= w[0].ee - 1e-9 * w[0].ee.abs());
            }
            assert!(ee(&joint) >= ee(&base));
        }
    }

    #[test]
    fn records_are_consistent() {
        let (_, cfg) = setup(0);
        let out = run(2, &OptimizationConfig::default());
        for r in &out.records {
            let ee = cfg.power.bandwidth_hz * r.sum_se / r.p_tot;
            assert!((ee - r.ee).abs() <= 1e-9 * r.ee);
            assert!((r.per_user_se.iter().sum::<f64>() - r.sum_se).abs() <= 1e-9 * r.sum_se);
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.as_str()), Some(s));
        }
        assert_eq!(Stage::parse("later"), None);
    }
}
