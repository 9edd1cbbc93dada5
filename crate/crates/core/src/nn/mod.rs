//! Small neural-network engine: per-input 1D convolutions, dense ReLU
//! layers, softmax policy and scalar value heads, and analytic backprop.

pub mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use network::{
    actor_output_grad, apply_gradients, backward, backward_actor, backward_critic, build_network,
    critic_output_grad, entropy, forward, forward_actor, forward_critic, forward_from_prefix,
    softmax, vector_prefix, Block, Direction, ForwardTrace, Gradients, Head, NetInput,
    NetworkParams, Topology, VectorPrefix, DEFAULT_FILTERS, DEFAULT_HIDDEN_LAYERS,
    DEFAULT_HIDDEN_UNITS, DEFAULT_KERNEL,
};
