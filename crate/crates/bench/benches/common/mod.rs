use cellfree_core::geometry::{generate_scenario, ChannelModel, ChannelSet, ScenarioConfig};
use cellfree_core::metrics::{mmse_combiners, Combiners, LinkParams};
use cellfree_core::quantization::analytic_zeta;

pub fn link() -> LinkParams {
    LinkParams { p_u: 0.1, noise: 10f64.powf(-12.1) }
}

pub fn model(num_aps: usize, num_users: usize) -> ChannelModel {
    let sc = ScenarioConfig { num_aps, num_users, ..ScenarioConfig::default() };
    let (topo, geo) = generate_scenario(&sc, 7).unwrap();
    ChannelModel::new(&topo, &geo).unwrap()
}

/// Channels at the region centers with 4-bit ADCs and full power.
pub struct Fixture {
    pub model: ChannelModel,
    pub channels: ChannelSet,
    pub bits: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub combiners: Combiners,
}

pub fn fixture(num_aps: usize, num_users: usize) -> Fixture {
    let model = model(num_aps, num_users);
    let channels = model.channels(&model.centers()).unwrap();
    let bits = vec![4.0; num_aps];
    let zeta: Vec<f64> = bits.iter().map(|&b| analytic_zeta(b)).collect();
    let eta = vec![1.0; num_users];
    let combiners = mmse_combiners(&channels, &zeta, &eta, link()).unwrap();
    Fixture { model, channels, bits, zeta, eta, combiners }
}
