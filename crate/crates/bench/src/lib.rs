//! Fixtures shared by the benchmarks.

use ksc_core::kinetic::sample_uniform;
use ksc_core::{
    AgentSystem, BellmanModel, BinaryFeedback, ControlBox, GridGeometry, HjbParams, InstantaneousParams,
    InteractionKernel, ParticleEnsemble, Penalty, ValueGrid,
};

pub fn hk() -> InteractionKernel {
    InteractionKernel::hegselmann_krause()
}

pub fn ic_feedback(penalty: Penalty) -> BinaryFeedback {
    BinaryFeedback::Instantaneous {
        params: InstantaneousParams::from_rate(0.3, 0.05, 2e-3, 0.0, penalty),
        bx: ControlBox::default(),
    }
}

pub fn ensemble(n: usize) -> ParticleEnsemble {
    ParticleEnsemble::uniform(n, -1.0, 1.0, 1e-3, 7).unwrap()
}

pub fn agents(n: usize) -> AgentSystem {
    AgentSystem::new(sample_uniform(n, -1.0, 1.0, 7), 2e-3).unwrap()
}

pub fn bellman(n_nodes: usize, n_controls: usize) -> (BellmanModel, ValueGrid) {
    let geo = GridGeometry::new(-1.0, 1.0, n_nodes).unwrap();
    let params = HjbParams {
        n_controls,
        ..HjbParams::default()
    };
    let model = BellmanModel::new(geo, &hk(), &params, &ControlBox::default()).unwrap();
    let grid = ValueGrid::from_fn(geo, |x, y| 0.5 * (x * x + y * y));
    (model, grid)
}
