//! Small tanh MLPs with hand-derived reverse passes, a diagonal Gaussian
//! policy head and an Adam optimizer.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gaussian::{
    entropy, log_prob, log_prob_backward, policy_backward, policy_backward_into, policy_forward,
    sample_reparam, value_backward, value_backward_into, value_forward, PolicyOutput,
};
pub use mlp::{layer_sizes as mlp_sizes, MlpParams, Trace, LOG_STD_MAX, LOG_STD_MIN};
