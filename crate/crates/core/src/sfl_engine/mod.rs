//! Split training: the device/server round protocol, device-model assembly,
//! bias-resilient aggregation and the per-tenant training loop.

pub mod aggregate;
pub mod channel;
pub mod model;
pub mod protocol;
pub mod simulate;
pub mod workload;

pub use aggregate::{aggregate_bias_resilient, aggregate_full, data_weights, global_loss};
pub use channel::{link, Endpoint, Frame};
pub use model::{assemble_device_model, ModelLayout, ModelState, Side, SubModel};
pub use protocol::{device_forward, device_step, server_step, train_round, DeviceForward, ServerStep};
pub use simulate::{
    draw_participation, draw_participation_with, run_simulation, write_cycle_trace, CycleTrace,
    GradientObservation, Participant, SimulationConfig, SimulationResult, CYCLE_TRACE_HEADER,
};
pub use workload::{Activation, Matrix, MlpWorkload, QuadraticWorkload, Workload};
