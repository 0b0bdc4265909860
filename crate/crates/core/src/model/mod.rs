//! The forecasting network, its parameters and checkpoints.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Pooling};
pub use network::{
    encode, forward, graph_agg, pool, read_out, spatiotemporal_block, tcn_block,
    update_running_stats, Bound, ForwardOutput, Mode, Model,
};
pub use params::ParameterSet;

/// Parameter count quoted for the reference architecture; the accounting
/// report itemises how the runtime count differs from it.
pub const REFERENCE_PARAMETER_COUNT: usize = 140_970;
