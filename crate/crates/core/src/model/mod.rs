//! The network: per-view encoders, shared cross-view attention, per-view
//! self-representation `H_sr = H C` and per-view decoders.

mod config;
mod forward;
mod params;
mod store;

pub use config::{AttentionMode, ModelConfig};
pub use forward::{
    attend, attend_nodes, build_forward, decode, decode_nodes, encode, encode_nodes, forward,
    self_represent, self_represent_nodes, AttendOutput, AttentionNodes, ForwardNodes,
    ForwardState, LayerNodes, ViewState,
};
pub use params::{AttentionParams, DenseLayer, ModelParams, ParamId};
pub use store::{load_model, save_model, ModelMeta, TrainingState, META_FILE, SCHEMA_VERSION};
