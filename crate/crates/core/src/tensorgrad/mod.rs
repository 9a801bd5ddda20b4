//! Small dense-tensor autodiff: enough to train MLPs on 2-D data.

mod adam;
mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use nn::Mlp;
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{log_sum_exp, softmax_rows, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(Tensor::squared_norm)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
