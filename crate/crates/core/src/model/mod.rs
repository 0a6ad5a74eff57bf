//! Tri-branch transformer with a linear merge head.

mod checkpoint;
mod layers;
mod params;
mod positional;


pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT,
};
pub use layers::{
    branch_forward, decoder_forward, encoder_forward, merge_forward, mtt_forward,
    multi_head_attention, scaled_dot_product_attention, LayerOptions,
};
pub use params::{
    AttentionParams, BranchParams, BranchShape, DecoderLayerParams, EncoderLayerParams,
    FeedForwardParams, HeadParams, MergeHead, ModelConfig, ModelSettings, MttParams, NormParams,
    ParamId, ParamStore,
};
pub use positional::{apply_positional_encoding, PositionalEncodingTable};
